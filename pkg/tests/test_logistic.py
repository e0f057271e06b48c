import numpy as np
import pytest

from cohortforge.errors import DataError, NumericError
from cohortforge.indices import IndexConfig, PROPENSITY_VARIANCE, propensity_index
from cohortforge.logistic import logistic_fit, penalized_deviance


def grid_fit(x, y, ridge):
    """Brute-force minimizer of the penalized deviance on standardized x.

    A coarse grid locates the basin; finer grids around the incumbent pin
    the optimum to well below 1e-3.
    """
    z = (x - x.mean()) / x.std()
    center, half = np.zeros(2), 6.0
    for step in (0.05, 5e-3, 5e-4, 5e-5):
        b0 = np.arange(center[0] - half, center[0] + half + step / 2, step)
        b1 = np.arange(center[1] - half, center[1] + half + step / 2, step)
        B0, B1 = np.meshgrid(b0, b1, indexing="ij")
        eta = B0[..., None] + B1[..., None] * z
        dev = -2 * np.sum(y * eta - np.logaddexp(0, eta), axis=-1) + 2 * ridge * B1 ** 2
        i, j = np.unravel_index(np.argmin(dev), dev.shape)
        center, half = np.array([b0[i], b1[j]]), 10 * step
    return center, z


class TestLogisticFit:
    def test_four_point_grid_oracle(self):
        x = np.array([-1.0, -0.5, 0.5, 1.0])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        (b0, b1), _ = grid_fit(x, y, 0.1)
        m = logistic_fit(x, y, ridge=0.1)
        assert m.intercept == pytest.approx(b0, abs=1e-3)
        assert m.coef[0] == pytest.approx(b1, abs=1e-3)

    def test_intercept_only(self):
        X = np.zeros((30, 2))
        y = np.r_[np.ones(10), np.zeros(20)]
        m = logistic_fit(X, y)
        np.testing.assert_allclose(m.predict_proba(X), 10 / 30, atol=1e-12)

    def test_separable_stays_finite(self):
        x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)]
        y = np.r_[np.zeros(20), np.ones(20)]
        m = logistic_fit(x, y, ridge=1e-6)
        assert np.all(np.isfinite(m.coef))
        p = m.predict_proba(x[:, None])
        assert np.all((p > 0) & (p < 1))

    def test_original_scale_coefficients(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((300, 2)) * [2.0, 0.5] + [1.0, -3.0]
        y = (rng.random(300) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1] - 4)))).astype(float)
        m = logistic_fit(X, y)
        np.testing.assert_allclose(m.intercept_original + X @ m.coef_original,
                                   m.decision_function(X), atol=1e-10)

    def test_iteration_cap(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(50)
        y = (x > 0).astype(float)
        with pytest.raises(NumericError) as info:
            logistic_fit(x, y, ridge=0.0, max_iter=2)
        assert "iterations" in info.value.diagnostics

    @pytest.mark.parametrize("y", [np.zeros(5), np.ones(5), np.array([0, 1, 2, 0, 1])])
    def test_label_errors(self, y):
        with pytest.raises(DataError):
            logistic_fit(np.arange(5.0), y)

    def test_penalized_deviance_definition(self):
        D = np.column_stack([np.ones(3), [0.0, 1.0, -1.0]])
        y = np.array([1.0, 0.0, 1.0])
        theta = np.array([0.2, -0.4])
        eta = D @ theta
        p = 1 / (1 + np.exp(-eta))
        expected = -2 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)) + 2 * 0.5 * 0.16
        assert penalized_deviance(theta, D, y, 0.5) == pytest.approx(expected, rel=1e-12)


class TestPropensityIndex:
    cfg = IndexConfig(kind=PROPENSITY_VARIANCE)

    def test_zero_features(self):
        y = np.r_[np.ones(8), np.zeros(12)]
        assert propensity_index(np.zeros((20, 3)), y, self.cfg) < 1e-6

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((80, 3))
        y = (rng.random(80) < 0.4).astype(float)
        assert propensity_index(X, y, self.cfg) == pytest.approx(
            propensity_index(X, 1 - y, self.cfg), abs=1e-9)

    def test_grid_oracle_two_normals(self):
        rng = np.random.default_rng(4)
        x = np.r_[rng.standard_normal(200), rng.standard_normal(200) + 2]
        y = np.r_[np.ones(200), np.zeros(200)]
        (b0, b1), z = grid_fit(x, y, 1e-6)
        ps = 1 / (1 + np.exp(-(b0 + b1 * z)))
        value = propensity_index(x[:, None], y, self.cfg)
        assert value == pytest.approx(np.var(ps), abs=1e-3)
        assert 0 <= value <= 0.25
