"""Proportional-odds (cumulative logit) outcome model.

The model is ``logit P(Y <= l | X) = alpha_l - xi^T X`` for ``l = 1..L-1``,
where ``X`` holds the expanded covariates followed by the treatment
indicator. Larger ``xi^T X`` shifts mass toward higher (better) levels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .logit_fit import FitError

FEATURE_KINDS = ("linear", "quadratic", "interaction")


@dataclass(frozen=True)
class FeatureMap:
    """Covariate expansion used by the outcome model.

    ``quadratic`` adds squares of non-binary columns (squares of 0/1 columns
    duplicate the linear term). ``interaction`` adds all pairwise products.
    Call :meth:`resolve` on training data before use so the squared columns
    are fixed.
    """

    kind: str = "linear"
    square_cols: tuple | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature map {self.kind!r}; use one of {FEATURE_KINDS}")

    def resolve(self, x) -> "FeatureMap":
        if self.kind != "quadratic" or self.square_cols is not None:
            return self
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        cols = tuple(k for k in range(x.shape[1]) if len(np.unique(x[:, k])) > 2)
        return FeatureMap(self.kind, cols)

    def expand(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(x.shape[0], -1)
        parts = [x]
        if self.kind == "quadratic":
            cols = self.square_cols
            if cols is None:
                cols = self.resolve(x).square_cols
            parts.append(x[:, list(cols)] ** 2)
        elif self.kind == "interaction":
            pairs = list(itertools.combinations(range(x.shape[1]), 2))
            if pairs:
                parts.append(np.column_stack([x[:, j] * x[:, k] for j, k in pairs]))
        return np.column_stack(parts) if len(parts) > 1 else x


def as_feature_map(fm) -> FeatureMap:
    if fm is None:
        return FeatureMap()
    if isinstance(fm, FeatureMap):
        return fm
    return FeatureMap(str(fm))


@dataclass(frozen=True)
class OrdinalModel:
    intercepts: np.ndarray
    slopes: np.ndarray  # expanded covariates, then treatment
    fisher: np.ndarray  # averaged observed information, natural parameters
    converged: bool
    iterations: int
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    columns: tuple | None = None  # covariate columns of the dataset used

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.intercepts, self.slopes])

    @property
    def n_levels(self) -> int:
        return self.intercepts.shape[0] + 1


@dataclass(frozen=True)
class CategoryProbs:
    """Model probabilities of each level with treatment set to 0 and to 1."""

    p0: np.ndarray  # n x L
    p1: np.ndarray  # n x L


def _cum_to_probs(cum):
    n = cum.shape[0]
    full = np.concatenate([np.zeros((n, 1)), cum, np.ones((n, 1))], axis=1)
    return np.diff(full, axis=1)


def design_matrix(x, z, feature_map: FeatureMap) -> np.ndarray:
    return np.column_stack([feature_map.expand(x), np.asarray(z, dtype=float)])


def _obs_terms(alpha_nat, F, y, L):
    """Per-observation log-likelihood pieces.

    Returns log P, first derivatives w.r.t. the upper (u) and lower (v)
    linear predictors and the second derivatives (uu, vv, uv).
    """
    cuts = alpha_nat[: L - 1]
    eta = F @ alpha_nat[L - 1:]
    upper = y < L
    lower = y > 1
    u = np.where(upper, cuts[np.minimum(y, L - 1) - 1] - eta, np.inf)
    v = np.where(lower, cuts[np.maximum(y - 1, 1) - 1] - eta, -np.inf)
    # F(u) - F(v) = F(u) (1 - F(v)) (1 - exp(v - u)) avoids cancellation
    Fu, Su = expit(u), expit(-u)
    Fv, Sv = expit(v), expit(-v)
    r = -np.expm1(v - u)
    logp = log_expit(u) + log_expit(-v) + np.log(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        du = np.where(upper, Su / (Sv * r), 0.0)
        dv = np.where(lower, -Fv / (Fu * r), 0.0)
    uu = du * (1 - 2 * Fu) - du**2
    vv = dv * (1 - 2 * Fv) - dv**2
    uv = -du * dv
    return logp, du, dv, uu, vv, uv


def _jacobians(F, y, L):
    """Rows of d u / d alpha and d v / d alpha (natural parameters)."""
    n, q = F.shape
    K = L - 1 + q
    Gu = np.zeros((n, K))
    Gv = np.zeros((n, K))
    idx = np.arange(n)
    up = y < L
    lo = y > 1
    Gu[idx[up], y[up] - 1] = 1.0
    Gv[idx[lo], y[lo] - 2] = 1.0
    Gu[:, L - 1:] = -F
    Gv[:, L - 1:] = -F
    return Gu, Gv


def loglik_parts(alpha_nat, F, y, L, hessian=True):
    """Log-likelihood, per-subject scores and (optionally) Hessian."""
    y = np.asarray(y)
    logp, du, dv, uu, vv, uv = _obs_terms(alpha_nat, F, y, L)
    Gu, Gv = _jacobians(F, y, L)
    scores = Gu * du[:, None] + Gv * dv[:, None]
    if not hessian:
        return logp.sum(), scores, None
    H = (Gu * uu[:, None]).T @ Gu + (Gv * vv[:, None]).T @ Gv
    cross = (Gu * uv[:, None]).T @ Gv
    H += cross + cross.T
    return logp.sum(), scores, H


def fit_proportional_odds(x, z, y, feature_map="linear", n_levels=None,
                          max_iter: int = 100, tol: float = 1e-8) -> OrdinalModel:
    """Maximum likelihood fit of the proportional-odds model.

    Damped Newton on ``(alpha_1..alpha_{L-1}, xi)``; the log-likelihood is
    concave there, and steps that would break the ordering of the cut
    points are halved.
    """
    y = np.asarray(y, dtype=np.int64)
    L = int(n_levels) if n_levels is not None else int(y.max())
    counts = np.bincount(y - 1, minlength=L)
    if L < 2:
        raise FitError("outcome model: fewer than 2 levels")
    if np.any(counts == 0):
        empty = [int(k) + 1 for k in np.flatnonzero(counts == 0)]
        raise FitError(
            f"outcome model: level(s) {empty} have no observations; "
            "collapse adjacent levels and refit"
        )
    fm = as_feature_map(feature_map).resolve(x)
    F = design_matrix(x, z, fm)
    n, q = F.shape
    if q and np.linalg.matrix_rank(np.column_stack([np.ones(n), F])) < q + 1:
        raise FitError("outcome model: design matrix is rank deficient")

    cum = np.cumsum(counts)[:-1] / n
    alpha = np.concatenate([np.log(cum / (1 - cum)), np.zeros(q)])
    ll, scores, H = loglik_parts(alpha, F, y, L)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = scores.sum(axis=0)
        if np.max(np.abs(g)) / n < tol:
            converged = True
            it -= 1
            break
        neg = -H
        try:
            np.linalg.cholesky(neg)
        except np.linalg.LinAlgError:
            neg = neg + (abs(np.linalg.eigvalsh(neg).min()) + 1e-6) * np.eye(len(g))
        step = np.linalg.solve(neg, g)
        t = 1.0
        while t >= 1e-10:
            cand = alpha + t * step
            if np.all(np.diff(cand[: L - 1]) > 0):
                ll_c = loglik_parts(cand, F, y, L, hessian=False)[0]
                if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                    break
            t *= 0.5
        if t < 1e-10:
            break
        alpha = cand
        ll, scores, H = loglik_parts(alpha, F, y, L)
    if not converged and np.max(np.abs(scores.sum(axis=0))) / n < tol:
        converged = True
    if converged:
        # polishing Newton step so the total score sits at round-off level
        try:
            cand = alpha + np.linalg.solve(-H, scores.sum(axis=0))
            if np.all(np.diff(cand[: L - 1]) > 0):
                ll_c, s_c, H_c = loglik_parts(cand, F, y, L)
                if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                    alpha, scores, H = cand, s_c, H_c
        except np.linalg.LinAlgError:
            pass
    if not converged:
        raise FitError(f"outcome model: no convergence in {max_iter} iterations")
    fisher = -H / n
    return OrdinalModel(
        intercepts=alpha[: L - 1].copy(), slopes=alpha[L - 1:].copy(), fisher=fisher,
        converged=True, iterations=it, feature_map=fm,
    )


def category_probs(model: OrdinalModel, x, feature_map=None, alpha=None) -> CategoryProbs:
    """Level probabilities for every subject with treatment set to 0 and 1.

    ``alpha`` overrides the fitted natural parameters (used for numerical
    derivatives).
    """
    fm = model.feature_map if feature_map is None else as_feature_map(feature_map).resolve(x)
    a = model.alpha if alpha is None else np.asarray(alpha, dtype=float)
    return probs_from_features(fm.expand(x), a, model.n_levels)


def probs_from_features(Fx, alpha, L) -> CategoryProbs:
    """Category probabilities from already-expanded covariates (no treatment column)."""
    cuts, xi = alpha[: L - 1], alpha[L - 1:]
    eta0 = Fx @ xi[:-1]
    out = []
    for zval in (0.0, 1.0):
        eta = eta0 + xi[-1] * zval
        out.append(_cum_to_probs(expit(cuts[None, :] - eta[:, None])))
    return CategoryProbs(p0=out[0], p1=out[1])


def below(v):
    """``out[..., l] = sum_{l' < l} v[..., l']`` along the last axis."""
    c = np.cumsum(v, axis=-1)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), c[..., :-1]], axis=-1)


def above(v):
    """``out[..., l] = sum_{l' > l} v[..., l']`` along the last axis."""
    c = np.cumsum(v[..., ::-1], axis=-1)[..., ::-1]
    return np.concatenate([c[..., 1:], np.zeros(v.shape[:-1] + (1,))], axis=-1)


@dataclass(frozen=True)
class MuTables:
    """Weighted level totals from which all double sums over mu follow.

    ``row1[l] = sum_i w_row_i p1_l(X_i)``, ``col0[l] = sum_j w_col_j p0_l(X_j)``;
    ``self_win[i] = mu(X_i, X_i)`` and ``self_loss[i]`` the mirrored quantity.
    """

    row1: np.ndarray
    col0: np.ndarray
    self_win: np.ndarray
    self_loss: np.ndarray

    def win_total(self) -> float:
        """``sum_i sum_j w_row_i w_col_j mu(X_i, X_j)`` over all i, j."""
        return float(self.row1 @ below(self.col0))

    def loss_total(self) -> float:
        return float(self.row1 @ above(self.col0))


def mu_pair_tables(cp: CategoryProbs, w_row, w_col) -> MuTables:
    """Tables for ``mu(X_i, X_j) = sum_{l > l'} p1_l(X_i) p0_l'(X_j)``."""
    row1 = np.asarray(w_row, dtype=float) @ cp.p1
    col0 = np.asarray(w_col, dtype=float) @ cp.p0
    self_win = np.einsum("il,il->i", cp.p1, below(cp.p0))
    self_loss = np.einsum("il,il->i", cp.p1, above(cp.p0))
    return MuTables(row1=row1, col0=col0, self_win=self_win, self_loss=self_loss)


def influence_alpha(model: OrdinalModel, x, z, y, feature_map=None) -> np.ndarray:
    """Per-subject influence rows ``I^-1 s_i`` in natural parameters."""
    fm = model.feature_map if feature_map is None else as_feature_map(feature_map).resolve(x)
    F = design_matrix(x, z, fm)
    _, scores, _ = loglik_parts(model.alpha, F, np.asarray(y, dtype=np.int64),
                                model.n_levels, hessian=False)
    try:
        inv = np.linalg.inv(model.fisher)
    except np.linalg.LinAlgError:
        raise FitError("outcome model: singular information matrix") from None
    return scores @ inv.T
