"""Tabular data model, CSV ingestion, one-hot expansion and range filtering."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

MAX_LEVELS = 10
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass(frozen=True)
class VariableKind:
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "categorical"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise ValueError("categorical kind needs at least one level")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"duplicate categorical levels {self.levels}")
            if any(level == "" for level in self.levels):
                raise ValueError("categorical levels must be non-empty")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def __str__(self):
        if self.is_categorical:
            return "categorical(" + ",".join(self.levels) + ")"
        return self.kind


CONTINUOUS = VariableKind("continuous")
BINARY = VariableKind("binary")


def categorical(levels: Iterable) -> VariableKind:
    return VariableKind("categorical", tuple(str(level) for level in levels))


def parse_kind(text: str) -> VariableKind:
    """Parse ``continuous``, ``binary``, ``categorical`` or ``categorical(a,b,c)``."""
    text = text.strip()
    low = text.lower()
    if low in ("continuous", "binary"):
        return VariableKind(low)
    if low.startswith("categorical"):
        rest = text[len("categorical"):].strip()
        if not rest:
            return VariableKind("categorical", ("?",))  # placeholder: infer levels from data
        if not (rest.startswith("(") and rest.endswith(")")):
            raise DataError(f"malformed kind {text!r}")
        return categorical(s.strip() for s in rest[1:-1].split(","))
    raise DataError(f"unknown variable kind {text!r}")


@dataclass(frozen=True)
class Column:
    name: str
    kind: VariableKind


@dataclass(frozen=True, eq=False)
class Dataset:
    """Subjects x variables.

    Categorical columns hold integer level codes (indices into
    ``kind.levels``); binary and continuous columns hold raw numbers.
    """

    name: str
    columns: tuple[Column, ...]
    values: np.ndarray
    row_ids: tuple[str, ...]
    n_dropped: int = 0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            values = values.reshape(len(self.row_ids), len(self.columns))
        if values.shape != (len(self.row_ids), len(self.columns)):
            raise DataError(
                f"{self.name}: values shape {values.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.columns)} columns"
            )
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"{self.name}: duplicate column names")
        if np.isnan(values).any():
            raise DataError(f"{self.name}: missing values present")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "row_ids", tuple(str(r) for r in self.row_ids))
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def from_array(cls, name, values, column_names, kinds=None, row_ids=None):
        values = np.asarray(values, dtype=float)
        if kinds is None:
            kinds = [CONTINUOUS] * len(column_names)
        if row_ids is None:
            row_ids = [str(i) for i in range(values.shape[0])]
        cols = tuple(Column(n, k) for n, k in zip(column_names, kinds))
        return cls(name, cols, values, tuple(row_ids))

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n_rows

    def column_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"{self.name}: no column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def labels(self, name: str) -> list[str]:
        col = self.columns[self.column_index(name)]
        vals = self.column(name)
        if col.kind.is_categorical:
            return [col.kind.levels[int(v)] for v in vals]
        return [format_number(v) for v in vals]

    def take(self, rows, name: str | None = None) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            name or self.name,
            self.columns,
            self.values[rows],
            tuple(self.row_ids[i] for i in rows),
        )

    def select_columns(self, names: Sequence[str]) -> "Dataset":
        idx = [self.column_index(n) for n in names]
        return Dataset(self.name, tuple(self.columns[i] for i in idx),
                       self.values[:, idx], self.row_ids)

    def renamed(self, name: str) -> "Dataset":
        return Dataset(name, self.columns, self.values, self.row_ids, self.n_dropped)

    def has_categorical(self) -> bool:
        return any(c.kind.is_categorical for c in self.columns)


def format_number(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _parse_float(cell: str):
    try:
        value = float(cell)
    except ValueError:
        return None
    if math.isnan(value) or math.isinf(value):
        return None
    return value


def _sort_levels(labels: Iterable[str]) -> tuple[str, ...]:
    labels = set(labels)
    nums = {lab: _parse_float(lab) for lab in labels}
    if all(v is not None for v in nums.values()):
        return tuple(sorted(labels, key=lambda lab: nums[lab]))
    return tuple(sorted(labels))


def _canonical_label(cell: str) -> str:
    value = _parse_float(cell)
    return format_number(value) if value is not None else cell


def load_csv(
    path,
    schema: Mapping[str, VariableKind | str] | None = None,
    max_levels: int = MAX_LEVELS,
    drop_missing: bool = False,
    name: str | None = None,
) -> Dataset:
    """Read a CSV into a :class:`Dataset`, inferring variable kinds.

    Inference: exactly two distinct numeric values gives Binary; 3 to
    ``max_levels`` distinct numeric values, or an all-label column with at
    most ``max_levels`` labels, gives Categorical; anything else numeric is
    Continuous. ``schema`` entries override inference. An ``id`` column, if
    present, supplies row identifiers.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"{path}: duplicate column names {dupes}")
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: line {lineno} has {len(r)} cells, expected {len(header)}")

    schema = {k: (parse_kind(v) if isinstance(v, str) else v) for k, v in (schema or {}).items()}
    unknown = set(schema) - set(header)
    if unknown:
        raise DataError(f"{path}: schema names unknown columns {sorted(unknown)}")

    cells = [[c.strip() for c in r] for r in body]
    missing = [any(c.lower() in MISSING_TOKENS for c in r) for r in cells]
    n_missing = sum(missing)
    if n_missing and not drop_missing:
        first = missing.index(True) + 2
        raise DataError(
            f"{path}: {n_missing} row(s) with missing values (first at line {first}); "
            "use drop_missing to discard them"
        )
    keep = [i for i, m in enumerate(missing) if not m]
    if not keep:
        raise DataError(f"{path}: no complete rows")
    cells = [cells[i] for i in keep]
    linenos = [i + 2 for i in keep]

    if "id" in header:
        id_col = header.index("id")
        row_ids = [r[id_col] for r in cells]
        if len(set(row_ids)) != len(row_ids):
            raise DataError(f"{path}: duplicate ids in 'id' column")
    else:
        id_col = None
        row_ids = [str(i) for i in range(len(cells))]

    columns, matrix = [], []
    for j, cname in enumerate(header):
        if j == id_col:
            continue
        raw = [r[j] for r in cells]
        kind, vals = _parse_column(path, cname, raw, linenos, schema.get(cname), max_levels)
        columns.append(Column(cname, kind))
        matrix.append(vals)
    values = np.column_stack(matrix) if matrix else np.empty((len(cells), 0))
    return Dataset(
        name or os.path.splitext(os.path.basename(path))[0],
        tuple(columns), values, tuple(row_ids), n_dropped=n_missing,
    )


def _parse_column(path, cname, raw, linenos, declared, max_levels):
    parsed = [_parse_float(c) for c in raw]
    bad = [i for i, v in enumerate(parsed) if v is None]

    if declared is not None and declared.is_categorical:
        labels = [_canonical_label(c) for c in raw]
        if declared.levels == ("?",):
            levels = _sort_levels(labels)
        else:
            levels = tuple(_canonical_label(lv) for lv in declared.levels)
            lookup = set(levels)
            for i, lab in enumerate(labels):
                if lab not in lookup:
                    raise DataError(
                        f"{path}: line {linenos[i]}, column {cname!r}: "
                        f"label {raw[i]!r} not among declared levels"
                    )
        code = {lab: k for k, lab in enumerate(levels)}
        return categorical(levels), np.array([code[lab] for lab in labels], dtype=float)

    if declared is not None or (bad and len(bad) < len(raw)):
        # numeric column required
        if bad:
            i = bad[0]
            raise DataError(
                f"{path}: line {linenos[i]}, column {cname!r}: cannot parse {raw[i]!r} as a number"
            )

    if bad:
        # every cell is a label
        levels = _sort_levels(raw)
        if len(levels) > max_levels:
            raise DataError(
                f"{path}: column {cname!r} has {len(levels)} distinct labels "
                f"(> {max_levels}); declare it categorical in the schema"
            )
        code = {lab: k for k, lab in enumerate(levels)}
        return categorical(levels), np.array([code[c] for c in raw], dtype=float)

    vals = np.array(parsed, dtype=float)
    n_distinct = len(np.unique(vals))
    if declared is not None:
        if declared.kind == "binary" and n_distinct > 2:
            raise DataError(f"{path}: column {cname!r} declared binary but has {n_distinct} values")
        return declared, vals
    if n_distinct == 2:
        return BINARY, vals
    if 2 < n_distinct <= max_levels:
        levels = _sort_levels(_canonical_label(c) for c in raw)
        code = {lab: k for k, lab in enumerate(levels)}
        return categorical(levels), np.array([code[_canonical_label(c)] for c in raw], dtype=float)
    return CONTINUOUS, vals


def write_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + d.column_names)
        cols = [d.labels(n) for n in d.column_names]
        for i, rid in enumerate(d.row_ids):
            w.writerow([rid] + [c[i] for c in cols])


def binarize(d: Dataset) -> Dataset:
    """Replace every categorical column by one indicator per level (no level dropped)."""
    if not d.has_categorical():
        return d
    columns, blocks = [], []
    for j, col in enumerate(d.columns):
        v = d.values[:, j]
        if col.kind.is_categorical:
            for k, level in enumerate(col.kind.levels):
                columns.append(Column(f"{col.name}={level}", BINARY))
                blocks.append((v == k).astype(float))
        else:
            columns.append(col)
            blocks.append(v)
    values = np.column_stack(blocks)
    return Dataset(d.name, tuple(columns), values, d.row_ids, d.n_dropped)


def align_levels(d: Dataset, reference: Dataset) -> Dataset:
    """Re-express ``d`` on the column order and categorical levels of ``reference``."""
    ref_names = reference.column_names
    if set(ref_names) != set(d.column_names):
        missing = sorted(set(ref_names) - set(d.column_names))
        extra = sorted(set(d.column_names) - set(ref_names))
        raise DataError(f"column mismatch: missing {missing}, unexpected {extra}")
    d = d.select_columns(ref_names)
    values = d.values.copy()
    for j, (col, ref_col) in enumerate(zip(d.columns, reference.columns)):
        if ref_col.kind.is_categorical != col.kind.is_categorical:
            # numeric column read as categorical (or vice versa) in one file
            labels = d.labels(col.name)
        elif col.kind.is_categorical:
            labels = d.labels(col.name)
        else:
            continue
        if ref_col.kind.is_categorical:
            code = {lab: k for k, lab in enumerate(ref_col.kind.levels)}
            bad = [lab for lab in labels if lab not in code]
            if bad:
                raise DataError(f"column {col.name!r}: level {bad[0]!r} unknown to {reference.name}")
            values[:, j] = [code[lab] for lab in labels]
        else:
            parsed = [_parse_float(lab) for lab in labels]
            if any(p is None for p in parsed):
                raise DataError(f"column {col.name!r}: non-numeric labels in {d.name}")
            values[:, j] = parsed
    return Dataset(d.name, reference.columns, values, d.row_ids, d.n_dropped)


def range_filter(pool: Dataset, clinical: Dataset) -> tuple[Dataset, list[str]]:
    """Keep pool rows whose every value lies inside the clinical range.

    Numeric columns use the clinical ``[min, max]``; categorical columns
    require a level observed in the clinical data. The returned pool is
    re-coded onto the clinical column order and levels.
    """
    if set(pool.column_names) != set(clinical.column_names):
        missing = sorted(set(clinical.column_names) - set(pool.column_names))
        extra = sorted(set(pool.column_names) - set(clinical.column_names))
        raise DataError(f"range_filter column mismatch: missing {missing}, unexpected {extra}")
    keep = np.ones(pool.n_rows, dtype=bool)
    recoded = np.empty((pool.n_rows, len(clinical.columns)))
    for j, ccol in enumerate(clinical.columns):
        pj = pool.column_index(ccol.name)
        pcol = pool.columns[pj]
        if ccol.kind.is_categorical:
            observed = {ccol.kind.levels[int(k)] for k in np.unique(clinical.values[:, j])}
            code = {lab: k for k, lab in enumerate(ccol.kind.levels)}
            labels = pool.labels(pcol.name)
            inside = np.array([lab in observed for lab in labels])
            recoded[:, j] = [code.get(lab, -1) for lab in labels]
        else:
            if pcol.kind.is_categorical:
                parsed = [_parse_float(lab) for lab in pool.labels(pcol.name)]
                if any(p is None for p in parsed):
                    raise DataError(f"column {pcol.name!r}: non-numeric labels in {pool.name}")
                v = np.array(parsed)
            else:
                v = pool.values[:, pj]
            lo, hi = clinical.values[:, j].min(), clinical.values[:, j].max()
            inside = (v >= lo) & (v <= hi)
            recoded[:, j] = v
        keep &= inside
    kept = np.flatnonzero(keep)
    excluded = [pool.row_ids[i] for i in np.flatnonzero(~keep)]
    out = Dataset(pool.name, clinical.columns, recoded[kept],
                  tuple(pool.row_ids[i] for i in kept), pool.n_dropped)
    return out, excluded


def read_schema(path) -> dict[str, VariableKind]:
    """Schema file: one ``column = kind`` per line, ``#`` comments."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'column = kind'")
            key, val = line.split("=", 1)
            out[key.strip()] = parse_kind(val)
    return out


def pool_schema(clinical: Dataset) -> dict[str, VariableKind]:
    """Schema for reading a pool file against ``clinical``.

    Categorical columns stay categorical with levels read from the file;
    everything else is read as plain numbers so that out-of-range values
    reach :func:`range_filter` instead of failing ingestion.
    """
    return {
        c.name: parse_kind("categorical") if c.kind.is_categorical else CONTINUOUS
        for c in clinical.columns
    }
