"""Dissimilarity indices between a sample and N(0, I), or between groups.

* ``hermite_natural``: phi-weighted L2 distance of a density from the
  standard normal, estimated by seeded Monte Carlo.
* ``hermite_differential``: mixture-weighted L2 distance between two group
  densities, averaged over the pooled sample.
* ``multi_group_criterion``: weighted sum of squared pairwise distances.
* ``propensity_index``: variance of fitted propensity scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .kde import KdeModel, kde_eval, std_normal_pdf
from .logistic import logistic_fit

HERMITE_DIFFERENTIAL = "hermite_differential"
PROPENSITY_VARIANCE = "propensity_variance"
HERMITE_NATURAL = "hermite_natural"
INDEX_KINDS = (HERMITE_DIFFERENTIAL, PROPENSITY_VARIANCE, HERMITE_NATURAL)


@dataclass(frozen=True)
class IndexConfig:
    kind: str = HERMITE_DIFFERENTIAL
    mc_samples: int = 10_000
    seed: int = 0
    bandwidth: str = "scott"
    ridge: float = 1e-6
    ps_replicates: int = 1

    def __post_init__(self):
        if self.kind not in INDEX_KINDS:
            raise ConfigError(f"unknown index kind {self.kind!r}; choose from {INDEX_KINDS}")
        if self.mc_samples < 100:
            raise ConfigError("mc_samples must be at least 100")
        if self.bandwidth != "scott":
            raise ConfigError(f"unsupported bandwidth rule {self.bandwidth!r}")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if self.ps_replicates < 1:
            raise ConfigError("ps_replicates must be at least 1")


@dataclass(frozen=True)
class MixtureWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or any(x < 0 for x in w) or sum(w) <= 0:
            raise ConfigError("mixture weights must be non-negative and not all zero")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_sizes(cls, *sizes) -> "MixtureWeights":
        return cls(tuple(float(s) for s in sizes))

    @property
    def total(self) -> float:
        return sum(self.weights)

    def normalized(self) -> np.ndarray:
        w = np.array(self.weights)
        return w / w.sum()

    def __len__(self):
        return len(self.weights)


class McEstimate(NamedTuple):
    value: float
    stderr: float


def _density(f, x: np.ndarray) -> np.ndarray:
    if isinstance(f, KdeModel):
        return kde_eval(f, x)
    return np.asarray(f(x), dtype=float).reshape(-1)


def hermite_natural(f: KdeModel | Callable, d: int, cfg: IndexConfig = IndexConfig()) -> McEstimate:
    """Monte Carlo estimate of ``E_phi[(f(Z) - phi(Z))^2]`` with ``Z ~ N(0, I_d)``."""
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((cfg.mc_samples, d))
    sq = (_density(f, Z) - std_normal_pdf(Z)) ** 2
    return McEstimate(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(sq.size)))


def _eval_groups(eval_set):
    if isinstance(eval_set, np.ndarray):
        groups = [eval_set]
    else:
        groups = [np.asarray(g, dtype=float) for g in eval_set]
    groups = [g[:, None] if g.ndim == 1 else g for g in groups]
    if not groups or sum(g.shape[0] for g in groups) == 0:
        raise DataError("evaluation set is empty")
    return groups


def _mixture_mean(values_per_group, weights) -> float:
    """Weighted average of per-group means; one group means a plain mean."""
    if len(values_per_group) == 1:
        return float(np.mean(values_per_group[0]))
    w = weights.normalized()
    return float(sum(wg * np.mean(v) for wg, v in zip(w, values_per_group) if v.size))


def hermite_differential(f_i: KdeModel, f_j: KdeModel, eval_set,
                         weights: MixtureWeights | None = None) -> float:
    """``sqrt(mean over the mixture of (f_i - f_j)^2)``.

    ``eval_set`` is either one pooled sample matrix (plain mean over its
    rows) or a list of per-group samples combined with ``weights``
    (defaulting to group sizes, which reproduces the pooled mean).
    """
    groups = _eval_groups(eval_set)
    if weights is None:
        weights = MixtureWeights.from_sizes(*(g.shape[0] for g in groups))
    elif len(groups) > 1 and len(weights) != len(groups):
        raise ConfigError("one weight per evaluation group required")
    sq = [(_density(f_i, g) - _density(f_j, g)) ** 2 for g in groups]
    return float(np.sqrt(_mixture_mean(sq, weights)))


def multi_group_criterion(kdes: Sequence[KdeModel], weights: MixtureWeights, eval_set) -> float:
    """``sum_{i<j} w_i w_j d_f^2(f_i, f_j)`` on a shared evaluation set."""
    k = len(kdes)
    if k < 2:
        raise ConfigError("need at least two groups")
    if len(weights) != k:
        raise ConfigError("one weight per group required")
    dims = {m.dim for m in kdes}
    if len(dims) != 1:
        raise DataError("all densities must share one dimension")
    groups = _eval_groups(eval_set)
    eval_w = MixtureWeights.from_sizes(*(g.shape[0] for g in groups))
    dens = [[_density(m, g) for g in groups] for m in kdes]
    w = weights.weights
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            sq = [(a - b) ** 2 for a, b in zip(dens[i], dens[j])]
            total += w[i] * w[j] * _mixture_mean(sq, eval_w)
    return total


def propensity_scores(X, y, ridge: float = 1e-6) -> np.ndarray:
    model = logistic_fit(X, y, ridge=ridge)
    return model.predict_proba(X)


def propensity_index(X, y, cfg: IndexConfig = IndexConfig(kind=PROPENSITY_VARIANCE)) -> float:
    """Population variance of the fitted propensity scores (lies in [0, 0.25])."""
    X = np.asarray(X, dtype=float)
    values = [np.var(propensity_scores(X, y, cfg.ridge)) for _ in range(cfg.ps_replicates)]
    return float(np.mean(values))
