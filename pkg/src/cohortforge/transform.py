"""Rank-based normal scores and PCA, chained into a fitted transformation.

The fitted :class:`TransformPipeline` maps raw (binarized) variables to a
low-dimensional, approximately standard-normal space: normal scores per
variable, projection on the leading principal components, then normal
scores again per component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError

FORMAT_VERSION = 1
DEFAULT_MAX_DIM = 7


@dataclass(frozen=True, eq=False)
class FyMap:
    """Normal-score lookup table for one variable.

    ``values`` are the sorted distinct training values and ``scores`` the
    normal quantile of their (average) rank, ``ndtri(r / (n + 1))``.
    """

    name: str
    values: np.ndarray
    scores: np.ndarray
    n_train: int
    ties: str = "average"

    def bound(self) -> float:
        return float(ndtri(self.n_train / (self.n_train + 1.0)))


def fy_fit(column, name: str = "x") -> FyMap:
    x = np.asarray(column, dtype=float)
    n = x.size
    if n < 2:
        raise DataError(f"column {name!r}: need at least 2 values for rank scores")
    ranks = stats.rankdata(x, method="average")
    values, first = np.unique(x, return_index=True)
    if values.size < 2:
        raise DataError(f"column {name!r} is constant; cannot rank-normalize")
    scores = ndtri(ranks[first] / (n + 1.0))
    return FyMap(name, values, scores, n)


def fy_apply(fmap: FyMap, values, return_clamps: bool = False):
    """Score new values: exact on the training support, linear in between,
    clamped to the extreme scores outside the training range."""
    v = np.asarray(values, dtype=float)
    out = np.interp(v, fmap.values, fmap.scores)
    if return_clamps:
        clamps = int(np.count_nonzero((v < fmap.values[0]) | (v > fmap.values[-1])))
        return out, clamps
    return out


@dataclass(frozen=True, eq=False)
class PcaModel:
    means: np.ndarray
    loadings: np.ndarray  # p x d, orthonormal columns
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        # einsum without BLAS: each row's result is independent of the batch it arrives in
        return np.einsum("np,pd->nd", np.atleast_2d(np.asarray(x, dtype=float)) - self.means,
                         self.loadings)


def pca_fit(matrix, d: int) -> PcaModel:
    """Top-``d`` principal axes of the sample covariance (ddof=1).

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    x = np.asarray(matrix, dtype=float)
    n, p = x.shape
    if d < 1 or d > p:
        raise ConfigError(f"target dimension {d} must lie in [1, {p}]")
    if n <= d:
        raise DataError(f"need more than {d} rows for {d} components, got {n}")
    means = x.mean(axis=0)
    xc = x - means
    _, sv, vt = np.linalg.svd(xc, full_matrices=False)
    eig = sv ** 2 / (n - 1)
    tol = max(n, p) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.count_nonzero(sv > tol))
    if d > rank:
        raise NumericError(f"requested {d} components but centered data has rank {rank}",
                           {"rank": rank, "d": d})
    loadings = vt[:d].T.copy()
    for k in range(d):
        j = np.argmax(np.abs(loadings[:, k]))
        if loadings[j, k] < 0:
            loadings[:, k] = -loadings[:, k]
    total = eig.sum()
    ratios = eig[:d] / total
    return PcaModel(means, loadings, eig[:d].copy(), ratios)


@dataclass(frozen=True, eq=False)
class TransformPipeline:
    columns: tuple[str, ...]
    stage1: tuple[FyMap, ...]
    pca: PcaModel
    stage2: tuple[FyMap, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.stage2)

    def to_dict(self) -> dict:
        def fmap(m):
            return {"name": m.name, "values": m.values.tolist(), "scores": m.scores.tolist(),
                    "n_train": m.n_train, "ties": m.ties}
        return {
            "format": "cohortforge.pipeline",
            "version": FORMAT_VERSION,
            "columns": list(self.columns),
            "stage1": [fmap(m) for m in self.stage1],
            "pca": {
                "means": self.pca.means.tolist(),
                "loadings": self.pca.loadings.tolist(),
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "explained_variance_ratio": self.pca.explained_variance_ratio.tolist(),
            },
            "stage2": [fmap(m) for m in self.stage2],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransformPipeline":
        if doc.get("format") != "cohortforge.pipeline":
            raise DataError("not a pipeline document")
        if doc.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported pipeline version {doc.get('version')}")

        def fmap(m):
            return FyMap(m["name"], np.array(m["values"], dtype=float),
                         np.array(m["scores"], dtype=float), int(m["n_train"]), m["ties"])
        pca = doc["pca"]
        return cls(
            tuple(doc["columns"]),
            tuple(fmap(m) for m in doc["stage1"]),
            PcaModel(np.array(pca["means"], dtype=float),
                     np.array(pca["loadings"], dtype=float).reshape(len(doc["columns"]), -1),
                     np.array(pca["eigenvalues"], dtype=float),
                     np.array(pca["explained_variance_ratio"], dtype=float)),
            tuple(fmap(m) for m in doc["stage2"]),
            dict(doc.get("diagnostics", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TransformPipeline":
        return cls.from_dict(json.loads(text))


def _matrix_for(columns, data) -> np.ndarray:
    if isinstance(data, Dataset):
        if data.has_categorical():
            raise DataError(f"{data.name}: binarize categorical columns first")
        missing = [c for c in columns if c not in data.column_names]
        if missing or len(data.column_names) != len(columns):
            extra = sorted(set(data.column_names) - set(columns))
            raise DataError(f"{data.name}: column mismatch, missing {missing}, unexpected {extra}")
        return data.select_columns(list(columns)).values
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(columns):
        raise DataError(f"expected a matrix with {len(columns)} columns")
    return x


def pipeline_fit(clinical, d: int, max_dim: int = DEFAULT_MAX_DIM, columns=None):
    """Fit normal scores, PCA and second-stage scores on ``clinical``.

    Returns ``(pipeline, z)`` with ``z`` the transformed training rows.
    """
    if d > max_dim:
        raise ConfigError(f"d={d} exceeds the dimension cap {max_dim}")
    if isinstance(clinical, Dataset):
        columns = tuple(clinical.column_names)
        x = _matrix_for(columns, clinical)
    else:
        x = np.asarray(clinical, dtype=float)
        columns = tuple(columns or (f"x{j}" for j in range(x.shape[1])))
    stage1 = tuple(fy_fit(x[:, j], columns[j]) for j in range(x.shape[1]))
    u = np.column_stack([fy_apply(m, x[:, j]) for j, m in enumerate(stage1)])
    pca = pca_fit(u, d)
    pcs = pca.project(u)
    stage2 = tuple(fy_fit(pcs[:, k], f"PC{k + 1}") for k in range(d))
    # route the training rows through pipeline_apply so both paths agree bit for bit
    z = pipeline_apply(TransformPipeline(columns, stage1, pca, stage2), x)
    skew = stats.skew(z, axis=0)
    diagnostics = {
        "n_train": int(x.shape[0]),
        "skewness": [float(s) for s in skew],
        "normality_ok": bool(np.all(np.abs(skew) < 0.5)),
        "explained_variance_ratio": [float(r) for r in pca.explained_variance_ratio],
        "explained_variance_total": float(pca.explained_variance_ratio.sum()),
    }
    return TransformPipeline(columns, stage1, pca, stage2, diagnostics), z


def pipeline_apply(t: TransformPipeline, data, return_clamps: bool = False):
    """Apply a fitted pipeline. With ``return_clamps`` also return per-stage
    counts of values that fell outside a map's training range."""
    x = _matrix_for(t.columns, data)
    u = np.empty_like(x)
    clamp1 = 0
    for j, m in enumerate(t.stage1):
        u[:, j], c = fy_apply(m, x[:, j], return_clamps=True)
        clamp1 += c
    pcs = t.pca.project(u)
    z = np.empty((x.shape[0], t.d))
    clamp2 = 0
    for k, m in enumerate(t.stage2):
        z[:, k], c = fy_apply(m, pcs[:, k], return_clamps=True)
        clamp2 += c
    if return_clamps:
        return z, {"stage1": clamp1, "stage2": clamp2,
                   "rate": (clamp1 + clamp2) / max(1, x.size + z.size)}
    return z
