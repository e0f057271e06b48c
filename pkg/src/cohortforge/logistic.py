"""Ridge-penalized logistic regression fitted by IRLS (damped Newton)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericError

MAX_ITER = 100
TOL = 1e-8
MAX_HALVINGS = 40
_P_MIN = np.finfo(float).tiny
_P_MAX = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Fitted model. ``intercept``/``coef`` act on standardized features."""

    intercept: float
    coef: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    ridge: float
    n_iter: int
    deviance: float
    deviance_change: float

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        return self.intercept + self.standardize(X) @ self.coef

    def predict_proba(self, X) -> np.ndarray:
        # keep scores strictly inside (0, 1) where expit would round to 0 or 1
        return np.clip(expit(self.decision_function(X)), _P_MIN, _P_MAX)

    @property
    def coef_original(self) -> np.ndarray:
        return self.coef / self.scale

    @property
    def intercept_original(self) -> float:
        return float(self.intercept - np.sum(self.coef * self.mean / self.scale))


def penalized_deviance(theta, D, y, ridge) -> float:
    """``-2 * loglik + 2 * ridge * |beta|^2`` with ``theta = (intercept, beta)``."""
    eta = D @ theta
    loglik = np.sum(y * eta - np.logaddexp(0.0, eta))
    return float(-2.0 * loglik + 2.0 * ridge * np.dot(theta[1:], theta[1:]))


def logistic_fit(X, y, ridge: float = 1e-6, max_iter: int = MAX_ITER,
                 tol: float = TOL) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if y.shape != (n,):
        raise DataError("label vector length does not match feature rows")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0/1")
    n1 = y.sum()
    if n1 == 0 or n1 == n:
        raise DataError("logistic fit needs both labels present")
    if n < d + 1:
        raise DataError(f"need at least {d + 1} rows for {d} features, got {n}")
    if ridge < 0:
        raise DataError("ridge penalty must be non-negative")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    D = np.empty((n, d + 1))
    D[:, 0] = 1.0
    D[:, 1:] = (X - mean) / scale

    penalty = np.full(d + 1, 2.0 * ridge)
    penalty[0] = 0.0
    theta = np.zeros(d + 1)
    theta[0] = np.log(n1 / (n - n1))
    dev = penalized_deviance(theta, D, y, ridge)
    change = np.inf
    it = 0
    while it < max_iter:
        it += 1
        p = expit(D @ theta)
        w = p * (1.0 - p)
        grad = D.T @ (p - y) + penalty * theta
        H = (D * w[:, None]).T @ D + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = theta - t * step
            new_dev = penalized_deviance(cand, D, y, ridge)
            if new_dev <= dev + 1e-12 * abs(dev):
                break
            t *= 0.5
        else:
            change = 0.0
            break
        change = dev - new_dev
        theta, dev = cand, new_dev
        if abs(change) < tol:
            break
    else:
        raise NumericError(
            f"logistic IRLS did not converge in {max_iter} iterations",
            {"iterations": it, "deviance": dev, "deviance_change": change},
        )
    return LogisticModel(float(theta[0]), theta[1:].copy(), mean, scale, ridge, it, dev, float(change))
