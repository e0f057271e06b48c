"""Mutation-only genetic search for a pool subset that augments a control arm.

Each candidate is a size-``m`` set of pool rows. Every generation mutates
each of the ``k`` parents ``s`` times (one member swapped for one
non-member), and the ``k`` fittest of parents plus mutants survive, so the
best fitness never gets worse. The search stops once the best fitness has
not improved for ``stall`` consecutive generations.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .indices import (
    HERMITE_DIFFERENTIAL,
    PROPENSITY_VARIANCE,
    IndexConfig,
    propensity_index,
)
from .kde import BANDWIDTH_FLOOR, KdeModel, kde_eval, scott_bandwidth

log = logging.getLogger(__name__)

_INIT_STREAM = 0
_MUTATION_STREAM = 1


@dataclass(frozen=True)
class GaConfig:
    m: int
    k: int = 10
    s: int = 50
    max_generations: int = 200
    stall: int = 3
    seed: int = 0
    index: IndexConfig = IndexConfig(kind=HERMITE_DIFFERENTIAL)
    incremental: bool = True
    threads: int = 1
    rel_tol: float = 1e-12

    def __post_init__(self):
        for name in ("m", "k", "s", "stall", "max_generations", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"GA parameter {name} must be >= 1")
        if self.index.kind not in (HERMITE_DIFFERENTIAL, PROPENSITY_VARIANCE):
            raise ConfigError(f"index kind {self.index.kind!r} cannot compare two groups")


@dataclass(frozen=True)
class SubsetState:
    indices: tuple[int, ...]
    fitness: float
    born: int = 1

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if list(idx) != sorted(set(idx)):
            raise ValueError("subset indices must be sorted and unique")
        object.__setattr__(self, "indices", idx)


@dataclass
class GaTrace:
    best_fitness: list[float] = field(default_factory=list)
    best_subsets: list[tuple[int, ...]] = field(default_factory=list)
    evaluations: list[int] = field(default_factory=list)  # cumulative, per generation
    cache_hits: int = 0
    requests: int = 0
    stop_reason: str = ""

    @property
    def generations(self) -> int:
        return len(self.best_fitness)

    @property
    def total_evaluations(self) -> int:
        return self.evaluations[-1] if self.evaluations else 0

    def rows(self):
        for g, (c, e) in enumerate(zip(self.best_fitness, self.evaluations), start=1):
            yield g, c, e


class SubsetFitness:
    """Fitness of ``B + R[subset]`` against treatment ``A``.

    For the Hermite index the two bandwidth vectors are fixed up front:
    Scott's rule on ``A`` for the treatment density, and the same spread
    scaled to ``n2 + m`` points for the augmented control. Fixing them makes
    a one-row swap change exactly one kernel term per evaluation point,
    which the incremental path exploits.
    """

    def __init__(self, A, B, R, m: int, cfg: IndexConfig):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(-1, self.A.shape[1])
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        if self.A.shape[1] != self.R.shape[1]:
            raise DataError("treatment, control and pool must have the same columns")
        if m > self.R.shape[0]:
            raise ConfigError(f"m={m} exceeds pool size {self.R.shape[0]}")
        self.m = m
        self.cfg = cfg
        self.n1, self.n2 = self.A.shape[0], self.B.shape[0]
        self.kind = cfg.kind
        if self.kind == HERMITE_DIFFERENTIAL:
            self._prepare_hermite()
        elif self.kind == PROPENSITY_VARIANCE:
            self.y = np.r_[np.ones(self.n1), np.zeros(self.n2 + m)]
        else:
            raise ConfigError(f"unsupported fitness index {self.kind!r}")

    # -- Hermite ---------------------------------------------------------
    def _prepare_hermite(self):
        d = self.A.shape[1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.h_treat = scott_bandwidth(self.A)
        n_c = self.n2 + self.m
        sd = self.A.std(axis=0, ddof=1)
        self.h_control = np.where(sd > 0, sd * n_c ** (-1.0 / (d + 4)), BANDWIDTH_FLOOR)
        self.h_control = np.maximum(self.h_control, BANDWIDTH_FLOOR)
        # scaled copies for the control kernel
        self._As = self.A / self.h_control
        self._Bs = self.B / self.h_control
        self._Rs = self.R / self.h_control
        self._norm_c = (2 * np.pi) ** (-0.5 * d) / np.prod(self.h_control)
        # treatment density is fixed: tabulate it on every row that can be an eval point
        f_treat = KdeModel(self.A, self.h_treat)
        self.fA_A = kde_eval(f_treat, self.A)
        self.fA_B = kde_eval(f_treat, self.B) if self.n2 else np.empty(0)
        self.fA_R = kde_eval(f_treat, self.R)

    def _kernel_sums(self, query_s, control_s):
        """Row sums of the unnormalized control kernel between scaled point sets."""
        out = np.empty(query_s.shape[0])
        step = max(1, (1 << 22) // max(1, control_s.shape[0] * control_s.shape[1]))
        for s in range(0, query_s.shape[0], step):
            diff = query_s[s:s + step, None, :] - control_s[None, :, :]
            out[s:s + step] = np.exp(-0.5 * np.einsum("qnd,qnd->qn", diff, diff)).sum(axis=1)
        return out

    def _kernel_to(self, query_s, point_s):
        diff = query_s - point_s
        return np.exp(-0.5 * np.einsum("nd,nd->n", diff, diff))

    def hermite_state(self, idx):
        """Unnormalized control-kernel sums at every eval point (A, B, R[idx])."""
        idx = np.asarray(idx, dtype=int)
        control = np.vstack([self._Bs, self._Rs[idx]])
        return (self._kernel_sums(self._As, control),
                self._kernel_sums(self._Bs, control),
                self._kernel_sums(self._Rs[idx], control))

    def _hermite_value(self, sA, sB, sS, fA_S):
        n_c = self.n2 + self.m
        scale = self._norm_c / n_c
        total = (np.sum((self.fA_A - sA * scale) ** 2)
                 + np.sum((self.fA_B - sB * scale) ** 2)
                 + np.sum((fA_S - sS * scale) ** 2))
        return float(np.sqrt(total / (self.n1 + n_c)))

    def hermite_reference(self, idx) -> float:
        idx = np.asarray(idx, dtype=int)
        sA, sB, sS = self.hermite_state(idx)
        return self._hermite_value(sA, sB, sS, self.fA_R[idx])

    def hermite_swap(self, idx, state, out_pos: int, r_in: int) -> float:
        """Fitness after replacing ``idx[out_pos]`` by pool row ``r_in``,
        updating the parent's kernel sums instead of recomputing them."""
        idx = np.asarray(idx, dtype=int)
        sA, sB, sS = state
        r_out = idx[out_pos]
        p_in, p_out = self._Rs[r_in], self._Rs[r_out]
        new_sA = sA + self._kernel_to(self._As, p_in) - self._kernel_to(self._As, p_out)
        new_sB = sB + self._kernel_to(self._Bs, p_in) - self._kernel_to(self._Bs, p_out)
        keep = np.delete(idx, out_pos)
        keep_s = self._Rs[keep]
        new_sS_keep = (np.delete(sS, out_pos) + self._kernel_to(keep_s, p_in)
                       - self._kernel_to(keep_s, p_out))
        control_new = np.vstack([self._Bs, keep_s, p_in[None, :]])
        s_in = self._kernel_to(control_new, p_in).sum()
        return self._hermite_value(
            new_sA, new_sB, np.r_[new_sS_keep, s_in], np.r_[self.fA_R[keep], self.fA_R[r_in]]
        )

    # -- generic ---------------------------------------------------------
    def __call__(self, idx) -> float:
        idx = np.asarray(idx, dtype=int)
        if self.kind == HERMITE_DIFFERENTIAL:
            return self.hermite_reference(idx)
        X = np.vstack([self.A, self.B, self.R[idx]])
        return propensity_index(X, self.y, self.cfg)


def evaluate(subset, A, B, R, cfg: IndexConfig) -> float:
    """Fitness of augmenting ``B`` with ``R[subset]`` against ``A``."""
    idx = subset.indices if isinstance(subset, SubsetState) else tuple(subset)
    return SubsetFitness(A, B, R, len(idx), cfg)(idx)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *stream])


def init_population(r_size: int, m: int, k: int, rng, fitness=None) -> list[SubsetState]:
    if m > r_size:
        raise ConfigError(f"m={m} exceeds pool size {r_size}")
    subsets = [tuple(np.sort(rng.choice(r_size, size=m, replace=False)).tolist()) for _ in range(k)]
    if fitness is None:
        return [SubsetState(s, float("nan"), 1) for s in subsets]
    return [SubsetState(s, float(fitness(s)), 1) for s in subsets]


def _draw_swap(indices, r_size: int, rng):
    """(position removed, pool row added) for one uniform swap."""
    m = len(indices)
    pos = int(rng.integers(m))
    u = int(rng.integers(r_size - m))
    for member in indices:  # map u to the u-th non-member
        if member <= u:
            u += 1
        else:
            break
    return pos, u


def mutate(parent: SubsetState, r_size: int, rng, generation: int | None = None) -> SubsetState:
    if len(parent.indices) >= r_size:
        warnings.warn("subset covers the whole pool; no mutation possible", RuntimeWarning, stacklevel=2)
        return parent
    pos, added = _draw_swap(parent.indices, r_size, rng)
    child = list(parent.indices)
    del child[pos]
    child.append(added)
    born = parent.born if generation is None else generation
    return SubsetState(tuple(sorted(child)), float("nan"), born)


def select(candidates, k: int) -> list[SubsetState]:
    """``k`` fittest distinct subsets; ties go to the lexicographically smaller set."""
    if not candidates:
        raise ConfigError("selection pool is empty")
    unique = {}
    for c in candidates:
        prev = unique.get(c.indices)
        if prev is None or c.born < prev.born:
            unique[c.indices] = c
    ranked = sorted(unique.values(), key=lambda c: (c.fitness, c.indices))
    return ranked[:k]


class _Evaluator:
    def __init__(self, fitness: SubsetFitness, cfg: GaConfig):
        self.fitness = fitness
        self.cfg = cfg
        self.cache: dict[tuple, float] = {}
        self.evaluations = 0
        self.requests = 0
        self.hits = 0
        self.use_swap = cfg.incremental and fitness.kind == HERMITE_DIFFERENTIAL

    def _map(self, fn, items):
        if self.cfg.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def fresh(self, keys):
        """Evaluate keys not yet cached; ``keys`` is a list of index tuples."""
        todo = []
        for key in keys:
            self.requests += 1
            if key in self.cache or key in todo:
                self.hits += 1
            else:
                todo.append(key)
        values = self._map(self.fitness, todo)
        for key, v in zip(todo, values):
            self.cache[key] = float(v)
        self.evaluations += len(todo)

    def swaps(self, jobs):
        """``jobs``: (child_key, parent_key, out_pos, r_in) from one generation."""
        todo, seen = [], set()
        for job in jobs:
            self.requests += 1
            if job[0] in self.cache or job[0] in seen:
                self.hits += 1
            else:
                seen.add(job[0])
                todo.append(job)
        parents = sorted({job[1] for job in todo})
        states = dict(zip(parents, self._map(self.fitness.hermite_state, parents)))
        values = self._map(
            lambda job: self.fitness.hermite_swap(job[1], states[job[1]], job[2], job[3]), todo
        )
        for job, v in zip(todo, values):
            self.cache[job[0]] = float(v)
        self.evaluations += len(todo)


def run(A, B, R, cfg: GaConfig) -> tuple[SubsetState, GaTrace]:
    fitness = SubsetFitness(A, B, R, cfg.m, cfg.index)
    r_size = fitness.R.shape[0]
    ev = _Evaluator(fitness, cfg)
    trace = GaTrace()

    pop = init_population(r_size, cfg.m, cfg.k, _rng(cfg.seed, _INIT_STREAM))
    ev.fresh([p.indices for p in pop])
    pop = select([SubsetState(p.indices, ev.cache[p.indices], 1) for p in pop], cfg.k)

    def record():
        trace.best_fitness.append(pop[0].fitness)
        trace.best_subsets.append(pop[0].indices)
        trace.evaluations.append(ev.evaluations)

    record()
    best, stalled = pop[0].fitness, 0
    trace.stop_reason = "max_generations"
    for g in range(2, cfg.max_generations + 1):
        children, jobs = [], []
        for i, parent in enumerate(pop):
            if cfg.m >= r_size:
                children.append(parent)
                continue
            for j in range(cfg.s):
                pos, added = _draw_swap(parent.indices, r_size, _rng(cfg.seed, _MUTATION_STREAM, g, i, j))
                child = tuple(sorted(parent.indices[:pos] + parent.indices[pos + 1:] + (added,)))
                children.append(SubsetState(child, float("nan"), g))
                jobs.append((child, parent.indices, pos, added))
        if ev.use_swap:
            ev.swaps(jobs)
        else:
            ev.fresh([c.indices for c in children])
        mutants = [SubsetState(c.indices, ev.cache[c.indices], c.born) for c in children]
        pop = select(pop + mutants, cfg.k)
        record()
        current = pop[0].fitness
        if current < best - cfg.rel_tol * abs(best):
            best, stalled = current, 0
        else:
            stalled += 1
        log.debug("generation %d best %.6g evaluations %d", g, current, ev.evaluations)
        if stalled >= cfg.stall:
            trace.stop_reason = "stall"
            break
    trace.cache_hits = ev.hits
    trace.requests = ev.requests
    return pop[0], trace
