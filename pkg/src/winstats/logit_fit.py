"""Logistic propensity score model fitted by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit


class FitError(RuntimeError):
    """A working model could not be fitted."""


@dataclass(frozen=True)
class PropensityModel:
    beta: np.ndarray  # intercept first
    e_hat: np.ndarray
    fisher: np.ndarray  # n^-1 sum e(1-e) x x^T
    converged: bool
    iterations: int
    columns: tuple | None = None  # covariate columns of the dataset used

    def predict(self, x, beta=None) -> np.ndarray:
        b = self.beta if beta is None else beta
        return expit(add_intercept(x) @ b)


def add_intercept(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.column_stack([np.ones(x.shape[0]), x])


def _loglik(X, z, beta):
    eta = X @ beta
    return float(np.sum(z * log_expit(eta) + (1 - z) * log_expit(-eta)))


def fit_logistic(x, z, max_iter: int = 50, tol_score: float = 1e-8,
                 tol_step: float = 1e-10, sep_eps: float = 1e-10) -> PropensityModel:
    """Maximum likelihood fit of ``P(Z=1|X) = expit(b0 + X b)``.

    An intercept column is always prepended to ``x``. Newton (IRLS) steps are
    halved until the log-likelihood does not decrease.

    Raises
    ------
    FitError
        On a rank-deficient design, non-convergence, or separation (some
        fitted probability within ``sep_eps`` of 0 or 1).
    """
    X = add_intercept(x)
    z = np.asarray(z, dtype=float)
    n, k = X.shape
    if np.linalg.matrix_rank(X) < k:
        raise FitError("propensity model: design matrix is rank deficient")

    zbar = z.mean()
    beta = np.zeros(k)
    beta[0] = np.log(zbar / (1 - zbar))
    ll = _loglik(X, z, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        e = expit(X @ beta)
        score = X.T @ (z - e)
        if np.max(np.abs(score)) / n < tol_score:
            converged = True
            it -= 1
            break
        W = e * (1 - e)
        info = (X * W[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise FitError("propensity model: singular information matrix") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(X, z, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t *= 0.5
        rel = np.max(np.abs(cand - beta)) / (1 + np.max(np.abs(beta)))
        beta, ll = cand, ll_new
        if rel < tol_step:
            converged = True
            break
    if converged:
        # one polishing step: Newton converges quadratically, so the score drops to round-off
        e = expit(X @ beta)
        try:
            step = np.linalg.solve((X * (e * (1 - e))[:, None]).T @ X, X.T @ (z - e))
            if _loglik(X, z, beta + step) >= ll - 1e-12 * abs(ll):
                beta = beta + step
        except np.linalg.LinAlgError:
            pass
    e = expit(X @ beta)
    if np.any(e < sep_eps) or np.any(e > 1 - sep_eps) or np.max(np.abs(beta)) > 30:
        raise FitError("propensity model: separation detected (fitted probabilities at 0 or 1)")
    if not converged:
        raise FitError(f"propensity model: no convergence in {max_iter} iterations")
    fisher = (X * (e * (1 - e))[:, None]).T @ X / n
    return PropensityModel(beta=beta, e_hat=e, fisher=fisher, converged=True, iterations=it)


def influence_beta(model: PropensityModel, x, z) -> np.ndarray:
    """Per-subject influence rows ``I^-1 x_i (z_i - e_i)`` for the coefficients.

    ``n^-2 * sum_i l_i l_i^T`` estimates the covariance of ``beta``.
    """
    X = add_intercept(x)
    resid = np.asarray(z, dtype=float) - model.e_hat
    try:
        inv = np.linalg.inv(model.fisher)
    except np.linalg.LinAlgError:
        raise FitError("propensity model: singular Fisher information") from None
    return (X * resid[:, None]) @ inv.T
