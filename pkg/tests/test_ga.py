import numpy as np
import pytest

from cohortforge.errors import ConfigError
from cohortforge.ga import (
    GaConfig,
    SubsetFitness,
    SubsetState,
    evaluate,
    init_population,
    mutate,
    run,
    select,
)
from cohortforge.indices import (
    HERMITE_DIFFERENTIAL,
    IndexConfig,
    MixtureWeights,
    PROPENSITY_VARIANCE,
    hermite_differential,
)
from cohortforge.kde import KdeModel

HERMITE = IndexConfig(kind=HERMITE_DIFFERENTIAL)
PS = IndexConfig(kind=PROPENSITY_VARIANCE)


@pytest.fixture(scope="module")
def groups():
    rng = np.random.default_rng(42)
    A = rng.standard_normal((30, 2)) + [0.5, 0.0]
    B = rng.standard_normal((5, 2))
    R = np.vstack([rng.standard_normal((150, 2)) + [0.5, 0.0], rng.standard_normal((50, 2)) * 2 + 3])
    return A, B, R


class TestSubsetState:
    def test_canonical_form(self):
        with pytest.raises(ValueError):
            SubsetState((3, 1), 0.0)
        with pytest.raises(ValueError):
            SubsetState((1, 1), 0.0)


class TestInit:
    def test_deterministic(self):
        a = init_population(5000, 40, 10, np.random.default_rng(7))
        b = init_population(5000, 40, 10, np.random.default_rng(7))
        assert [s.indices for s in a] == [s.indices for s in b]
        assert all(len(s.indices) == 40 and max(s.indices) < 5000 for s in a)

    def test_full_pool(self):
        pop = init_population(12, 12, 4, np.random.default_rng(0))
        assert all(s.indices == tuple(range(12)) for s in pop)

    def test_too_large(self):
        with pytest.raises(ConfigError):
            init_population(5, 6, 2, np.random.default_rng(0))

    def test_fitness_matches_fresh(self, groups):
        A, B, R = groups
        fit = SubsetFitness(A, B, R, 20, HERMITE)
        for s in init_population(len(R), 20, 5, np.random.default_rng(1), fit):
            assert s.fitness == evaluate(s, A, B, R, HERMITE)


class TestMutate:
    def test_single_swap(self):
        rng = np.random.default_rng(2)
        parent = init_population(100, 10, 1, rng)[0]
        for _ in range(200):
            child = mutate(parent, 100, rng)
            assert len(set(parent.indices) ^ set(child.indices)) == 2
            assert len(child.indices) == 10

    def test_forced_outsider(self):
        parent = SubsetState(tuple(i for i in range(20) if i != 13), 0.0)
        child = mutate(parent, 20, np.random.default_rng(3))
        assert 13 in child.indices

    def test_removal_frequency(self):
        rng = np.random.default_rng(4)
        m, reps = 20, 10_000
        parent = SubsetState(tuple(range(0, 200, 10)), 0.0)
        counts = dict.fromkeys(parent.indices, 0)
        for _ in range(reps):
            (gone,) = set(parent.indices) - set(mutate(parent, 200, rng).indices)
            counts[gone] += 1
        p = 1 / m
        sigma = np.sqrt(reps * p * (1 - p))
        assert all(abs(c - reps * p) <= 3 * sigma for c in counts.values())

    def test_full_pool_warns(self):
        parent = SubsetState(tuple(range(5)), 0.0)
        with pytest.warns(RuntimeWarning):
            assert mutate(parent, 5, np.random.default_rng(0)) is parent


class TestSelect:
    def test_ties_go_to_canonical_order(self):
        cands = [SubsetState((i, i + 5), 1.0) for i in (4, 2, 3, 0, 1)]
        assert [c.indices for c in select(cands, 3)] == [(0, 5), (1, 6), (2, 7)]

    def test_k_one_is_minimum(self):
        rng = np.random.default_rng(5)
        cands = [SubsetState((i,), float(v)) for i, v in enumerate(rng.random(30))]
        assert select(cands, 1)[0].fitness == min(c.fitness for c in cands)

    def test_duplicates_collapse(self):
        cands = [SubsetState((1, 2), 0.5, 3), SubsetState((1, 2), 0.5, 1), SubsetState((0, 2), 0.7)]
        out = select(cands, 3)
        assert [c.indices for c in out] == [(1, 2), (0, 2)]
        assert out[0].born == 1


class TestFitness:
    def test_matches_index_module(self, groups):
        A, B, R = groups
        idx = tuple(range(0, 40, 2))
        fit = SubsetFitness(A, B, R, 20, HERMITE)
        Bp = np.vstack([B, R[list(idx)]])
        expected = hermite_differential(KdeModel(A, fit.h_treat), KdeModel(Bp, fit.h_control),
                                        [A, Bp], MixtureWeights.from_sizes(30, 25))
        assert fit(idx) == pytest.approx(expected, rel=1e-12)

    def test_copy_pool_gives_zero(self):
        A = np.random.default_rng(6).standard_normal((25, 2))
        garbage = np.full((10, 2), 9.0)
        R = np.vstack([A[5:], garbage])
        assert evaluate(range(20), A, A[:5], R, HERMITE) == pytest.approx(0.0, abs=1e-12)

    def test_matched_beats_shifted(self, groups):
        A, B, R = groups
        matched = evaluate(range(20), A, B, R, HERMITE)
        shifted = evaluate(range(150, 170), A, B, R, HERMITE)
        assert matched < shifted
        assert evaluate(range(20), A, B, R, PS) < evaluate(range(150, 170), A, B, R, PS)

    def test_incremental_matches_reference(self, groups):
        A, B, R = groups
        rng = np.random.default_rng(8)
        fit = SubsetFitness(A, B, R, 20, HERMITE)
        worst = 0.0
        for _ in range(1000):
            idx = np.sort(rng.choice(len(R), 20, replace=False))
            state = fit.hermite_state(idx)
            pos = int(rng.integers(20))
            r_in = int(rng.choice(np.setdiff1d(np.arange(len(R)), idx)))
            fast = fit.hermite_swap(idx, state, pos, r_in)
            child = np.sort(np.r_[np.delete(idx, pos), r_in])
            worst = max(worst, abs(fast - fit.hermite_reference(child)))
        assert worst <= 1e-12

    def test_m_too_large(self, groups):
        A, B, R = groups
        with pytest.raises(ConfigError):
            SubsetFitness(A, B, R, len(R) + 1, HERMITE)


class TestRun:
    @pytest.mark.parametrize("index", [HERMITE, PS])
    def test_monotone_trace_and_stall(self, groups, index):
        A, B, R = groups
        cfg = GaConfig(m=20, k=6, s=15, seed=3, index=index)
        best, trace = run(A, B, R, cfg)
        c = np.array(trace.best_fitness)
        assert np.all(np.diff(c) <= 0)
        assert best.fitness == c.min() == c[-1]
        if trace.stop_reason == "stall":
            assert np.sum(c == c[-1]) >= cfg.stall + 1
        assert trace.requests == cfg.k + (trace.generations - 1) * cfg.k * cfg.s
        assert trace.total_evaluations == trace.requests - trace.cache_hits

    def test_improves_on_initial_population(self, groups):
        A, B, R = groups
        best, trace = run(A, B, R, GaConfig(m=20, k=6, s=15, seed=4))
        assert best.fitness <= trace.best_fitness[0]

    def test_cached_fitness_equals_fresh(self, groups):
        A, B, R = groups
        _, trace = run(A, B, R, GaConfig(m=20, k=6, s=15, seed=5))
        for subset, value in zip(trace.best_subsets, trace.best_fitness):
            assert value == pytest.approx(evaluate(subset, A, B, R, HERMITE), abs=1e-12)

    def test_deterministic_across_threads(self, groups):
        A, B, R = groups
        runs = [run(A, B, R, GaConfig(m=20, k=6, s=15, seed=6, threads=t)) for t in (1, 4, 1)]
        ref = runs[0]
        for best, trace in runs[1:]:
            assert best == ref[0]
            assert trace.best_fitness == ref[1].best_fitness
            assert trace.best_subsets == ref[1].best_subsets

    def test_reference_path_agrees(self, groups):
        A, B, R = groups
        fast = run(A, B, R, GaConfig(m=20, k=6, s=15, seed=7))
        slow = run(A, B, R, GaConfig(m=20, k=6, s=15, seed=7, incremental=False))
        assert fast[0].indices == slow[0].indices
        np.testing.assert_allclose(fast[1].best_fitness, slow[1].best_fitness, atol=1e-12)

    def test_generation_cap(self, groups):
        A, B, R = groups
        _, trace = run(A, B, R, GaConfig(m=20, k=4, s=5, seed=8, max_generations=2, stall=5))
        assert trace.generations == 2 and trace.stop_reason == "max_generations"

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GaConfig(m=0)
        with pytest.raises(ConfigError):
            GaConfig(m=5, index=IndexConfig(kind="hermite_natural"))
