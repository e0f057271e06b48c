"""Convex-hull membership by linear-programming feasibility.

A point ``z`` lies in the hull of the rows of ``V`` iff some ``lam >= 0``
with ``sum(lam) == 1`` satisfies ``V.T @ lam == z``. Each query solves that
feasibility problem with a dense phase-1 simplex; no facet enumeration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

LP_EPS = 1e-7
PIVOT_TOL = 1e-11
DEFAULT_MAX_DIM = 7


@dataclass(frozen=True)
class LpResult:
    feasible: bool
    objective: float
    pivots: int
    weights: np.ndarray


def phase1_feasible(A: np.ndarray, b: np.ndarray, eps: float = LP_EPS,
                    max_pivots: int | None = None) -> LpResult:
    """Decide whether ``A x = b, x >= 0`` is feasible.

    Minimizes the sum of artificial variables from the all-artificial basis
    with Bland's smallest-index rule, stopping as soon as the artificial sum
    drops to ``eps`` or no entering column remains.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    if max_pivots is None:
        max_pivots = 10 * (n + m)

    # rows 0..m-1 constraints, row m reduced costs; last column rhs
    T = np.empty((m + 1, n + 1))
    T[:m, :n] = A
    T[:m, n] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, n] = -b.sum()
    basis = np.arange(n, n + m)  # artificial ids n..n+m-1

    pivots = 0
    while True:
        objective = -T[m, n]
        if objective <= eps:
            break
        candidates = np.flatnonzero(T[m, :n] < -PIVOT_TOL)
        if candidates.size == 0:
            break
        if pivots >= max_pivots:
            raise NumericError(
                f"simplex pivot cap {max_pivots} exceeded",
                {"pivots": pivots, "objective": objective},
            )
        col = T[:m, candidates[0]]
        enter = candidates[0]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            # unbounded direction cannot occur in a phase-1 problem; guard anyway
            raise NumericError("phase-1 simplex found an unbounded column", {"column": int(enter)})
        ratios = T[rows, n] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        leave = ties[np.argmin(basis[ties])]
        piv = T[leave, enter]
        T[leave] /= piv
        factors = T[:, enter].copy()
        factors[leave] = 0.0
        T -= np.outer(factors, T[leave])
        basis[leave] = enter
        pivots += 1

    x = np.zeros(n)
    real = basis < n
    x[basis[real]] = np.maximum(T[:m, n][real], 0.0)
    objective = max(-T[m, n], 0.0)
    return LpResult(objective <= eps, objective, pivots, x)


@dataclass(frozen=True, eq=False)
class HullModel:
    vertices: np.ndarray
    eps: float = LP_EPS
    affine_rank: int = 0
    degenerate: bool = False
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def hull_build(points, eps: float = LP_EPS, max_dim: int = DEFAULT_MAX_DIM,
               drop_duplicates: bool = True) -> HullModel:
    V = np.asarray(points, dtype=float)
    if V.ndim != 2 or V.shape[0] < 1 or V.shape[1] < 1:
        raise ConfigError("hull needs a non-empty n x d point matrix")
    if V.shape[1] > max_dim:
        raise ConfigError(f"hull dimension {V.shape[1]} exceeds cap {max_dim}")
    if drop_duplicates:
        _, first = np.unique(V, axis=0, return_index=True)
        V = V[np.sort(first)]
    centered = V - V.mean(axis=0)
    if V.shape[0] > 1:
        sv = np.linalg.svd(centered, compute_uv=False)
        tol = max(V.shape) * np.finfo(float).eps * max(sv[0], 1.0)
        rank = int(np.count_nonzero(sv > tol))
    else:
        rank = 0
    V.flags.writeable = False
    return HullModel(V, eps, rank, rank < V.shape[1], V.min(axis=0), V.max(axis=0))


def hull_contains(h: HullModel, z) -> bool:
    z = np.asarray(z, dtype=float)
    if z.shape != (h.dim,):
        raise ConfigError(f"query has shape {z.shape}, hull dimension is {h.dim}")
    if np.any(z < h.lower - h.eps) or np.any(z > h.upper + h.eps):
        return False
    A = np.vstack([h.vertices.T, np.ones(h.n_vertices)])
    b = np.append(z, 1.0)
    return phase1_feasible(A, b, h.eps).feasible


def filter_inside(h: HullModel, points, threads: int = 1):
    """Partition row indices of ``points`` into (inside, outside)."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != h.dim:
        raise ConfigError(f"points must be m x {h.dim}")
    if threads > 1 and P.shape[0] > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flags = list(pool.map(lambda row: hull_contains(h, row), P))
    else:
        flags = [hull_contains(h, row) for row in P]
    flags = np.array(flags, dtype=bool)
    return np.flatnonzero(flags), np.flatnonzero(~flags)
