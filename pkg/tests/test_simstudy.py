import itertools

import numpy as np
import pytest

from cohortforge.errors import ConfigError
from cohortforge.simstudy import (
    SimConfig,
    augment_random,
    gen_covariates,
    gen_response,
    outcome_mean,
    run_power_study,
)

W3_MASS = {2: 0.1, 3: 0.2, 4: 0.2, 5: 0.2, 6: 0.2, 7: 0.1}
W4_MASS = {0: 0.125, 1: 0.25, 2: 0.25, 3: 0.25, 4: 0.125}


def tiny(**kw):
    base = dict(n_treat=20, n_control=5, m_augment=15, pool_size=300, deltas=(0.0, 0.5, 5.0),
                sigmas=(0.25,), n_datasets=3, n_response_reps=10, ga_k=4, ga_s=10,
                ga_max_generations=15)
    base.update(kw)
    return SimConfig(**base)


class TestCovariates:
    def test_support_and_bernoulli_mean(self):
        W = gen_covariates(50_000, np.random.default_rng(0))
        assert set(np.unique(W[:, 2])) <= set(W3_MASS)
        assert set(np.unique(W[:, 3])) <= set(W4_MASS)
        assert abs(W[:, 0].mean() - 0.2) <= 0.006
        assert abs(W[:, 1].mean() - 0.5) <= 3 * np.sqrt(0.25 / 50_000)

    def test_rounding_mass(self):
        n = 1_000_000
        W = gen_covariates(n, np.random.default_rng(1))
        for col, mass in ((2, W3_MASS), (3, W4_MASS)):
            for value, p in mass.items():
                freq = np.mean(W[:, col] == value)
                assert abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / n)


class TestResponse:
    def test_direct_substitution(self):
        y = gen_response([[0, 0, 2, 0]], [0], 0.0, 0.0, np.random.default_rng(0))
        assert y[0] == pytest.approx(5.5 + np.log(0.2))
        assert y[0] == pytest.approx(3.8906, abs=5e-5)

    def test_shift_is_delta(self):
        W = gen_covariates(10, np.random.default_rng(2))
        y1 = gen_response(W, np.ones(10), 0.7, 0.3, np.random.default_rng(5))
        y0 = gen_response(W, np.zeros(10), 0.7, 0.3, np.random.default_rng(5))
        np.testing.assert_allclose(y1 - y0, 0.7, atol=1e-12)

    def test_variance_matches_enumeration(self):
        values, probs = [], []
        for w1, w2, w3, w4 in itertools.product((0, 1), (0, 1), W3_MASS, W4_MASS):
            values.append(outcome_mean(np.array([[w1, w2, w3, w4]]))[0])
            probs.append((0.2 if w1 else 0.8) * 0.5 * W3_MASS[w3] * W4_MASS[w4])
        values, probs = np.array(values), np.array(probs)
        mean = probs @ values
        var = probs @ (values - mean) ** 2
        W = gen_covariates(1_000_000, np.random.default_rng(3))
        y = gen_response(W, np.zeros(len(W)), 0.0, 0.0, np.random.default_rng(4))
        assert y.mean() == pytest.approx(mean, abs=3e-3)
        assert y.var() == pytest.approx(var, rel=0.01)


class TestAugmentRandom:
    def test_all_rows(self):
        R = np.zeros((7, 4))
        np.testing.assert_array_equal(augment_random(None, R, 7, np.random.default_rng(0)), np.arange(7))

    def test_seeded(self):
        R = np.zeros((100, 4))
        a = augment_random(None, R, 10, np.random.default_rng(9))
        b = augment_random(None, R, 10, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_uniform(self):
        R, m, reps = np.zeros((50, 4)), 10, 10_000
        rng = np.random.default_rng(10)
        counts = np.zeros(50)
        for _ in range(reps):
            counts[augment_random(None, R, m, rng)] += 1
        p = m / 50
        assert np.all(np.abs(counts - reps * p) <= 3 * np.sqrt(reps * p * (1 - p)) + 1)

    def test_too_many(self):
        with pytest.raises(ConfigError):
            augment_random(None, np.zeros((3, 4)), 4, np.random.default_rng(0))


@pytest.fixture(scope="module")
def table():
    return run_power_study(tiny())


class TestPowerStudy:
    def test_shape(self, table):
        assert len(table.rows) == 2 * 3
        assert all(r.n_tests == 30 for r in table.rows)
        assert table.methods == ["random", "ga"]

    def test_large_effect_low_noise(self):
        t = run_power_study(tiny(sigmas=(0.01,), deltas=(5.0,), n_datasets=2))
        assert all(r.rejection_rate == 1.0 for r in t.rows)

    def test_reproducible_and_thread_free(self, table):
        again = run_power_study(tiny(), threads=3)
        assert again.rows == table.rows
        assert again.diagnostics == table.diagnostics

    def test_ga_improves_balance(self, table):
        ps = table.diagnostics["mean_ps_index"]
        assert ps["ga"] < ps["random"]

    def test_ols_option(self):
        t = run_power_study(tiny(test="ols", n_datasets=1))
        assert t.test == "ols"
        assert t.lookup("ga", 5.0, 0.25).rejection_rate == 1.0

    @pytest.mark.parametrize("bad", [dict(alpha=1.5), dict(test="z"), dict(m_augment=1000),
                                     dict(deltas=(-1.0,))])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            tiny(**bad)

    def test_desk_preset(self):
        cfg = SimConfig.desk()
        assert (cfg.pool_size, cfg.n_datasets, cfg.n_response_reps) == (5000, 20, 20)
