"""Power simulation: random versus GA augmentation of a small control arm.

Covariates follow the four-variable law (two Bernoulli, two rounded
uniforms); the outcome is a fixed nonlinear function of them plus a
treatment shift and Gaussian noise. For every simulated trial the control
arm is topped up from a simulated pool, either at random or by the genetic
search on the propensity index, and the treatment effect is tested on many
response draws.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError
from .ga import GaConfig, run as ga_run
from .indices import PROPENSITY_VARIANCE, IndexConfig, propensity_index

log = logging.getLogger(__name__)

COVARIATES = ("W1", "W2", "W3", "W4")
METHODS = ("random", "ga")
DEFAULT_DELTAS = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 1.0, 2.0, 5.0)

_DATA, _RANDOM, _GA, _RESPONSE = 10, 11, 12, 13


@dataclass(frozen=True)
class SimConfig:
    n_treat: int = 50
    n_control: int = 10
    m_augment: int = 40
    pool_size: int = 50_000
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    sigmas: tuple[float, ...] = (0.1, 0.25, 0.5)
    n_datasets: int = 100
    n_response_reps: int = 100
    alpha: float = 0.05
    seed: int = 0
    test: str = "welch"
    ga_k: int = 10
    ga_s: int = 50
    ga_max_generations: int = 200
    ga_stall: int = 3
    ridge: float = 1e-6

    def __post_init__(self):
        for name in ("n_treat", "n_control", "m_augment", "pool_size", "n_datasets",
                     "n_response_reps", "ga_k", "ga_s", "ga_max_generations", "ga_stall"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if any(d < 0 for d in self.deltas) or not self.deltas:
            raise ConfigError("deltas must be non-negative")
        if any(s < 0 for s in self.sigmas) or not self.sigmas:
            raise ConfigError("noise levels must be non-negative")
        if self.m_augment > self.pool_size:
            raise ConfigError("m_augment exceeds pool_size")
        if self.test not in ("welch", "ols"):
            raise ConfigError(f"unknown test {self.test!r}; use 'welch' or 'ols'")
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))

    @classmethod
    def desk(cls, **overrides) -> "SimConfig":
        """Laptop-sized defaults: pool 5,000 and 20 x 20 replicates."""
        base = dict(pool_size=5_000, n_datasets=20, n_response_reps=20)
        base.update(overrides)
        return cls(**base)

    def ga_config(self, seed: int) -> GaConfig:
        return GaConfig(
            m=self.m_augment, k=self.ga_k, s=self.ga_s,
            max_generations=self.ga_max_generations, stall=self.ga_stall, seed=seed,
            index=IndexConfig(kind=PROPENSITY_VARIANCE, ridge=self.ridge),
        )


@dataclass(frozen=True)
class PowerRow:
    method: str
    delta: float
    sigma: float
    rejection_rate: float
    n_tests: int

    @property
    def se(self) -> float:
        p = self.rejection_rate
        return float(np.sqrt(p * (1 - p) / self.n_tests))


@dataclass
class PowerTable:
    rows: list[PowerRow]
    test: str = "welch"
    alpha: float = 0.05
    diagnostics: dict = field(default_factory=dict)

    def lookup(self, method: str, delta: float, sigma: float) -> PowerRow:
        for r in self.rows:
            if r.method == method and r.delta == delta and r.sigma == sigma:
                return r
        raise KeyError((method, delta, sigma))

    def curve(self, method: str, sigma: float) -> list[PowerRow]:
        return sorted((r for r in self.rows if r.method == method and r.sigma == sigma),
                      key=lambda r: r.delta)

    @property
    def sigmas(self) -> list[float]:
        return sorted({r.sigma for r in self.rows})

    @property
    def methods(self) -> list[str]:
        seen = {r.method for r in self.rows}
        return [m for m in METHODS if m in seen] + sorted(seen - set(METHODS))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # all draws are non-negative, so half-up equals half-away-from-zero
    return np.floor(x + 0.5)


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """n x 4 matrix of (W1, W2, W3, W4)."""
    if n < 1:
        raise ConfigError("n must be positive")
    w1 = rng.random(n) < 0.2
    w2 = rng.random(n) < 0.5
    w3 = _round_half_up(rng.uniform(2.0, 7.0, n))
    w4 = _round_half_up(rng.uniform(0.0, 4.0, n))
    return np.column_stack([w1, w2, w3, w4]).astype(float)


def outcome_mean(W: np.ndarray) -> np.ndarray:
    W = np.atleast_2d(W)
    w1, w2, w3, w4 = W.T
    return 5.5 + 0.2 * w2 + np.log(0.1 * w3) + 0.3 * w4 + 0.2 * w1 * w4


def gen_response(W, treat, delta: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    treat = np.asarray(treat, dtype=float)
    noise = sigma * rng.standard_normal(W.shape[0]) if sigma > 0 else 0.0
    return outcome_mean(W) + delta * treat + noise


def augment_random(B, R, m: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted row indices of ``m`` pool rows drawn without replacement."""
    size = len(R)
    if m > size:
        raise ConfigError(f"cannot draw {m} rows from a pool of {size}")
    return np.sort(rng.choice(size, size=m, replace=False))


def _seed(*stream: int) -> int:
    return int(np.random.SeedSequence(list(stream)).generate_state(1)[0])


def _welch_reject(Y, treat, alpha):
    """Y: reps x n. Two-sided Welch test of treat==1 vs treat==0 per row."""
    t1 = treat == 1
    res = stats.ttest_ind(Y[:, t1], Y[:, ~t1], axis=1, equal_var=False)
    return res.pvalue < alpha


def _ols_reject(Y, treat, W, alpha):
    """Y: reps x n. t-test on the treatment coefficient of Y ~ 1 + treat + W."""
    X = np.column_stack([np.ones(len(treat)), treat, W])
    n, p = X.shape
    XtX_inv = np.linalg.pinv(X.T @ X)
    beta = Y @ (X @ XtX_inv)  # reps x p (XtX_inv symmetric)
    resid = Y - beta @ X.T
    s2 = np.sum(resid ** 2, axis=1) / (n - p)
    se = np.sqrt(s2 * XtX_inv[1, 1])
    t = beta[:, 1] / se
    return 2 * stats.t.sf(np.abs(t), n - p) < alpha


@dataclass
class _DatasetResult:
    rejections: dict  # (method, delta_idx, sigma_idx) -> count
    ps_index: dict  # method -> I_PS of treatment vs augmented control
    generations: int
    stop_reason: str


def simulate_dataset(cfg: SimConfig, r: int) -> _DatasetResult:
    rng = np.random.default_rng([cfg.seed, _DATA, r])
    A = gen_covariates(cfg.n_treat, rng)
    B = gen_covariates(cfg.n_control, rng)
    R = gen_covariates(cfg.pool_size, rng)

    rand_idx = augment_random(B, R, cfg.m_augment, np.random.default_rng([cfg.seed, _RANDOM, r]))
    best, trace = ga_run(A, B, R, cfg.ga_config(_seed(cfg.seed, _GA, r)))
    chosen = {"random": rand_idx, "ga": np.array(best.indices)}

    treat = np.r_[np.ones(cfg.n_treat), np.zeros(cfg.n_control + cfg.m_augment)]
    ps_cfg = IndexConfig(kind=PROPENSITY_VARIANCE, ridge=cfg.ridge)
    designs, ps_index = {}, {}
    for method, idx in chosen.items():
        W = np.vstack([A, B, R[idx]])
        designs[method] = W
        ps_index[method] = propensity_index(W, treat, ps_cfg)

    # common random numbers: one noise draw per response replicate, shared by
    # both methods and every (delta, sigma) cell
    z = np.random.default_rng([cfg.seed, _RESPONSE, r]).standard_normal(
        (cfg.n_response_reps, treat.size))
    counts = {}
    for method, W in designs.items():
        base = outcome_mean(W)
        for si, sigma in enumerate(cfg.sigmas):
            for di, delta in enumerate(cfg.deltas):
                Y = base + delta * treat + sigma * z
                if cfg.test == "welch":
                    rej = _welch_reject(Y, treat, cfg.alpha)
                else:
                    rej = _ols_reject(Y, treat, W, cfg.alpha)
                counts[(method, di, si)] = int(np.count_nonzero(rej))
    return _DatasetResult(counts, ps_index, trace.generations, trace.stop_reason)


def run_power_study(cfg: SimConfig, threads: int = 1) -> PowerTable:
    def one(r):
        log.info("dataset replicate %d/%d", r + 1, cfg.n_datasets)
        return simulate_dataset(cfg, r)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.n_datasets)))
    else:
        results = [one(r) for r in range(cfg.n_datasets)]

    n_tests = cfg.n_datasets * cfg.n_response_reps
    rows = []
    for method in METHODS:
        for si, sigma in enumerate(cfg.sigmas):
            for di, delta in enumerate(cfg.deltas):
                hits = sum(res.rejections[(method, di, si)] for res in results)
                rows.append(PowerRow(method, delta, sigma, hits / n_tests, n_tests))
    diagnostics = {
        "mean_ps_index": {m: float(np.mean([res.ps_index[m] for res in results])) for m in METHODS},
        "ga_generations": [res.generations for res in results],
        "ga_stop_reasons": [res.stop_reason for res in results],
        "n_datasets": cfg.n_datasets,
        "n_response_reps": cfg.n_response_reps,
    }
    return PowerTable(rows, cfg.test, cfg.alpha, diagnostics)
