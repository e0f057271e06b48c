"""Artifact writers: power tables and curves, balance reports, JSON/CSV helpers."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os

import numpy as np

from .dataset import Dataset, format_number
from .errors import DataError
from .kde import kde_fit
from .simstudy import PowerRow, PowerTable

METHOD_COLORS = {"random": "#d62728", "ga": "#1f77b4"}


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_text(path, text: str) -> str:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc
    return os.fspath(path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# -- power -------------------------------------------------------------------

POWER_HEADER = ("method", "delta", "sigma", "rejection_rate", "n_tests", "se")


def power_table_csv(t: PowerTable) -> str:
    rows = sorted(t.rows, key=lambda r: (r.sigma, r.method, r.delta))
    return csv_text(POWER_HEADER, [(r.method, r.delta, r.sigma, r.rejection_rate, r.n_tests, r.se)
                                   for r in rows])


def read_power_table(path) -> PowerTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != POWER_HEADER:
            raise DataError(f"{path}: not a power table (header {reader.fieldnames})")
        rows = [PowerRow(r["method"], float(r["delta"]), float(r["sigma"]),
                         float(r["rejection_rate"]), int(r["n_tests"])) for r in reader]
    if not rows:
        raise DataError(f"{path}: empty power table")
    return PowerTable(rows)


def power_svg(t: PowerTable, sigma: float, width: int = 480, height: int = 320) -> str:
    left, right, top, bottom = 56, 16, 28, 44
    pw, ph = width - left - right, height - top - bottom
    deltas = sorted({r.delta for r in t.rows if r.sigma == sigma})
    lo, hi = deltas[0], deltas[-1]
    span = hi - lo if hi > lo else 1.0

    def px(delta):
        return left + pw * (delta - lo) / span

    def py(p):
        return top + ph * (1.0 - p)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
        f'power vs effect size, sigma = {format_number(sigma)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for p in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{left - 6}" y="{py(p) + 4:.2f}" text-anchor="end" '
                   f'font-size="10">{p:.2f}</text>')
    for d in (lo, hi):
        out.append(f'<text x="{px(d):.2f}" y="{top + ph + 14}" text-anchor="middle" '
                   f'font-size="10">{format_number(d)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-size="11">delta</text>')
    for k, method in enumerate(t.methods):
        curve = t.curve(method, sigma)
        if not curve:
            continue
        pts = " ".join(f"{px(r.delta):.2f},{py(r.rejection_rate):.2f}" for r in curve)
        color = METHOD_COLORS.get(method, "#555555")
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                   f'data-method="{method}" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + ph - 10 - 14 * k}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{method}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_power_report(t: PowerTable, out_dir) -> list[str]:
    if not t.rows:
        raise DataError("power table is empty")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc.strerror}") from exc
    paths = [write_text(os.path.join(out_dir, "power.csv"), power_table_csv(t))]
    for sigma in t.sigmas:
        name = f"power_sigma_{format_number(sigma)}.svg"
        paths.append(write_text(os.path.join(out_dir, name), power_svg(t, sigma)))
    return paths


# -- balance -----------------------------------------------------------------

def balance_report(treatment: Dataset, control: Dataset, grid_points: int = 101) -> dict:
    """Counts of ones per binary column and density curves per continuous column.

    Returns three CSV documents keyed ``binary``, ``continuous`` and ``kde``.
    """
    if treatment.column_names != control.column_names:
        raise DataError("balance report needs identical columns in both groups")
    binary_rows, cont_rows, kde_rows = [], [], []
    for j, col in enumerate(treatment.columns):
        a = treatment.values[:, j]
        b = control.values[:, j]
        if col.kind.is_categorical:
            raise DataError("binarize both groups before the balance report")
        if col.kind.kind == "binary":
            ones_a, ones_b = int(np.count_nonzero(a == 1)), int(np.count_nonzero(b == 1))
            binary_rows.append((col.name, ones_a, ones_b, ones_a - ones_b,
                                ones_a / a.size, ones_b / b.size, ones_a / a.size - ones_b / b.size))
            continue
        pooled_sd = np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2) if a.size > 1 and b.size > 1 else 0.0
        smd = (a.mean() - b.mean()) / pooled_sd if pooled_sd > 0 else 0.0
        cont_rows.append((col.name, a.mean(), b.mean(), a.std(ddof=1), b.std(ddof=1), smd))
        lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
        pad = 0.1 * (hi - lo if hi > lo else 1.0)
        grid = np.linspace(lo - pad, hi + pad, grid_points)
        fa = kde_fit(a)(grid) if a.size > 1 and np.ptp(a) > 0 else np.zeros_like(grid)
        fb = kde_fit(b)(grid) if b.size > 1 and np.ptp(b) > 0 else np.zeros_like(grid)
        kde_rows.extend((col.name, x, da, db) for x, da, db in zip(grid, fa, fb))
    return {
        "binary": csv_text(("variable", "ones_treatment", "ones_control", "count_difference",
                            "prop_treatment", "prop_control", "prop_difference"), binary_rows),
        "continuous": csv_text(("variable", "mean_treatment", "mean_control", "sd_treatment",
                                "sd_control", "standardized_mean_difference"), cont_rows),
        "kde": csv_text(("variable", "x", "density_treatment", "density_control"), kde_rows),
    }


def histogram_csv(clinical_z: np.ndarray, pool_z: np.ndarray, bins: int = 30) -> str:
    """Per-component histogram counts of transformed clinical vs pool rows."""
    rows = []
    for k in range(clinical_z.shape[1]):
        cols = [clinical_z[:, k]] + ([pool_z[:, k]] if pool_z.size else [])
        allv = np.concatenate(cols)
        edges = np.linspace(allv.min(), allv.max(), bins + 1)
        hc, _ = np.histogram(clinical_z[:, k], edges)
        hp, _ = np.histogram(pool_z[:, k], edges) if pool_z.size else (np.zeros(bins, int), None)
        for b in range(bins):
            rows.append((f"PC{k + 1}", edges[b], edges[b + 1], int(hc[b]), int(hp[b])))
    return csv_text(("component", "bin_low", "bin_high", "clinical_count", "pool_count"), rows)
