"""Gaussian product-kernel density estimates with per-dimension bandwidths."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError

BANDWIDTH_FLOOR = 1e-6
_CHUNK = 1 << 22  # elements per broadcast block


def scott_bandwidth(points) -> np.ndarray:
    """Scott's rule, ``sd_j * n ** (-1 / (d + 4))`` per dimension."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = X.shape
    sd = X.std(axis=0, ddof=1)
    h = sd * n ** (-1.0 / (d + 4))
    small = ~(h > BANDWIDTH_FLOOR)
    if small.any():
        warnings.warn(
            f"zero-spread dimension(s) {np.flatnonzero(small).tolist()}; "
            f"bandwidth floored at {BANDWIDTH_FLOOR}",
            RuntimeWarning,
            stacklevel=3,
        )
        h = np.where(small, BANDWIDTH_FLOOR, h)
    return h


@dataclass(frozen=True, eq=False)
class KdeModel:
    points: np.ndarray
    bandwidth: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __call__(self, x) -> np.ndarray:
        return kde_eval(self, x)


def kde_fit(points, bandwidth=None) -> KdeModel:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise DataError("density estimate needs at least 2 points")
    if bandwidth is None:
        h = scott_bandwidth(X)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (X.shape[1],)).copy()
        if np.any(h <= 0):
            raise DataError("bandwidths must be positive")
    return KdeModel(X, h)


def kernel_matrix(query, points, bandwidth) -> np.ndarray:
    """Product-kernel values ``prod_j phi((q_j - x_j) / h_j) / h_j`` for all pairs."""
    Q = np.atleast_2d(np.asarray(query, dtype=float)) / bandwidth
    X = np.atleast_2d(np.asarray(points, dtype=float)) / bandwidth
    d = X.shape[1]
    norm = (2.0 * np.pi) ** (-0.5 * d) / np.prod(bandwidth)
    out = np.empty((Q.shape[0], X.shape[0]))
    step = max(1, _CHUNK // max(1, X.shape[0] * d))
    for s in range(0, Q.shape[0], step):
        diff = Q[s:s + step, None, :] - X[None, :, :]
        out[s:s + step] = np.exp(-0.5 * np.einsum("qnd,qnd->qn", diff, diff))
    return out * norm


def kde_eval(m: KdeModel, x) -> np.ndarray:
    """Density at each row of ``x`` (a single d-vector gives a 1-element array)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if m.dim > 1 or x.size == 1 else x[:, None]
    if x.shape[1] != m.dim:
        raise DataError(f"query dimension {x.shape[1]} != model dimension {m.dim}")
    Q = x / m.bandwidth
    X = m.points / m.bandwidth
    norm = (2.0 * np.pi) ** (-0.5 * m.dim) / np.prod(m.bandwidth)
    out = np.empty(Q.shape[0])
    step = max(1, _CHUNK // max(1, X.shape[0] * m.dim))
    for s in range(0, Q.shape[0], step):
        diff = Q[s:s + step, None, :] - X[None, :, :]
        out[s:s + step] = np.exp(-0.5 * np.einsum("qnd,qnd->qn", diff, diff)).mean(axis=1)
    return out * norm


def std_normal_pdf(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    return (2.0 * np.pi) ** (-0.5 * d) * np.exp(-0.5 * np.einsum("nd,nd->n", x, x))
