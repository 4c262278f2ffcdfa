"""Variance estimation, delta-method intervals and variance-reduction summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import pair_kernels
from .estimators import (
    AUGMENTED,
    WEIGHTED,
    WinEstimate,
    WorkingModels,
    estimate,
    outcome_covariates,
    point_taus,
    propensity_at,
    propensity_covariates,
    scheme_weights,
)
from .logit_fit import influence_beta
from .polr_fit import influence_alpha, probs_from_features


class InferenceError(ArithmeticError):
    """Variance estimation produced an unusable result."""


@dataclass(frozen=True)
class VarianceComponents:
    method: str
    route: str  # "influence_function" or "bebu_lachin"
    var_tau1: float
    var_tau_neg1: float
    cov: float
    phi1: np.ndarray | None = None
    phi_neg1: np.ndarray | None = None
    xi: dict | None = None  # U-statistic components for the Bebu-Lachin route


def variance_if(ds, est: WinEstimate, pm=None, om=None, cp=None) -> VarianceComponents:
    """Second-moment variance of the estimated influence function.

    ``phi_i = 2 (q_i - tau) + l_beta_i' A (+ l_alpha_i' C)`` where ``q_i`` is the
    per-subject kernel average and ``A``/``C`` are derivatives of the estimator,
    with its normalising denominators, in the propensity / outcome parameters.
    """
    method = est.method.upper()
    e_hat = None
    if method != "UNADJ":
        if pm is None:
            raise ValueError(f"{method} variance needs the propensity model")
        e_hat = pm.e_hat
    if method in AUGMENTED:
        if om is None:
            raise ValueError(f"{method} variance needs the outcome model")
    elif method not in WEIGHTED and method != "UNADJ":
        raise ValueError(f"unknown method {method!r}")

    n = ds.n
    w1, w0, a, b = scheme_weights(method, e_hat, n)
    aug = method in AUGMENTED
    Fx = None
    if aug:
        xo = outcome_covariates(ds, om)
        Fx = om.feature_map.expand(xo)
        if cp is None:
            cp = probs_from_features(Fx, om.alpha, om.n_levels)
    q1, qm = pair_kernels.projections_qhat(ds, w1, w0, a, b, cp if aug else None, method)
    phi1 = 2.0 * (q1 - est.tau1)
    phim = 2.0 * (qm - est.tau_neg1)

    if method != "UNADJ":
        xp = propensity_covariates(ds, pm)
        lb = influence_beta(pm, xp, ds.z)

        def over_beta(beta):
            return point_taus(ds, method, propensity_at(ds, pm, beta), cp)

        A = pair_kernels.derivative_aggregate(over_beta, pm.beta)
        phi1 = phi1 + lb @ A[0]
        phim = phim + lb @ A[1]
    if aug:
        la = influence_alpha(om, xo, ds.z, ds.y)
        L = om.n_levels

        def over_alpha(alpha):
            return point_taus(ds, method, e_hat, probs_from_features(Fx, alpha, L))

        C = pair_kernels.derivative_aggregate(over_alpha, om.alpha)
        phi1 = phi1 + la @ C[0]
        phim = phim + la @ C[1]

    if not (np.all(np.isfinite(phi1)) and np.all(np.isfinite(phim))):
        raise InferenceError(f"{method}: non-finite influence function values")
    v1 = float(phi1 @ phi1) / n**2
    vm = float(phim @ phim) / n**2
    cv = float(phi1 @ phim) / n**2
    return VarianceComponents(method, "influence_function", v1, vm, cv, phi1, phim)


def bebu_counts(ds):
    """Per-subject win/loss counts against the other arm.

    Returns ``(c, g, d, f)``: for treated ``i``, ``c_i``/``g_i`` count controls
    it beats / loses to; for control ``j``, ``d_j``/``f_j`` count treated
    subjects that beat / lose to it.
    """
    L = ds.n_levels
    t = ds.z == 1
    T = np.bincount(ds.y[t] - 1, minlength=L).astype(float)
    Cc = np.bincount(ds.y[~t] - 1, minlength=L).astype(float)
    yt = ds.y[t] - 1
    yc = ds.y[~t] - 1
    c = np.cumsum(Cc)[yt] - Cc[yt]
    g = Cc.sum() - np.cumsum(Cc)[yt]
    d = T.sum() - np.cumsum(T)[yc]
    f = np.cumsum(T)[yc] - T[yc]
    return c, g, d, f


def variance_bebu(ds, est: WinEstimate | None = None) -> VarianceComponents:
    """Two-sample U-statistic variance of the unadjusted estimator.

    Plug-in estimates of the covariance components ``xi_10``, ``xi_01`` and
    their win/loss cross versions from within-subject count products;
    ``var(tau1) = xi_10 / n1 + xi_01 / n0``.
    """
    if est is not None and est.method.upper() != "UNADJ":
        raise ValueError("the U-statistic variance applies to the unadjusted estimator only")
    n1, n0 = ds.n1, ds.n0
    if n1 < 2 or n0 < 2:
        raise InferenceError("each arm needs at least 2 subjects")
    c, g, d, f = bebu_counts(ds)
    t1 = c.sum() / (n1 * n0)
    tm = g.sum() / (n1 * n0)
    dt = n1 * n0 * (n0 - 1)  # treated subject, two distinct controls
    dc = n0 * n1 * (n1 - 1)  # control subject, two distinct treated
    xi = {
        "xi10": float((c * (c - 1)).sum() / dt - t1**2),
        "xi01": float((d * (d - 1)).sum() / dc - t1**2),
        "xi10_loss": float((g * (g - 1)).sum() / dt - tm**2),
        "xi01_loss": float((f * (f - 1)).sum() / dc - tm**2),
        "xi10_12": float((c * g).sum() / dt - t1 * tm),
        "xi01_12": float((d * f).sum() / dc - t1 * tm),
    }
    v1 = xi["xi10"] / n1 + xi["xi01"] / n0
    vm = xi["xi10_loss"] / n1 + xi["xi01_loss"] / n0
    cv = xi["xi10_12"] / n1 + xi["xi01_12"] / n0
    return VarianceComponents("UNADJ", "bebu_lachin", v1, vm, cv, xi=xi)


def z_quantile(conf_level: float) -> float:
    if not 0 < conf_level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(1 - (1 - conf_level) / 2))


def delta_wr_wd(vc: VarianceComponents, est: WinEstimate, conf_level: float = 0.95,
                log_wr: bool = False) -> WinEstimate:
    """Attach WR/WD variances and normal confidence intervals to ``est``.

    WR intervals are ``point +/- z * SE`` unless ``log_wr`` is set, in which
    case they are exponentiated from the log scale.
    """
    zq = z_quantile(conf_level)
    t1, tm = est.tau1, est.tau_neg1
    v1, vm, cv = vc.var_tau1, vc.var_tau_neg1, vc.cov
    var_wd = v1 + vm - 2 * cv
    if var_wd < 0:
        raise InferenceError(f"{est.method}: negative WD variance {var_wd:.3g}")
    se_wd = math.sqrt(var_wd)
    ci_wd = (est.wd - zq * se_wd, est.wd + zq * se_wd)
    var_wr = ci_wr = None
    if est.wr_defined and t1 > 0:
        var_wr = (t1**2 / tm**2) * (v1 / t1**2 - 2 * cv / (t1 * tm) + vm / tm**2)
        if var_wr < 0:
            raise InferenceError(
                f"{est.method}: negative WR variance {var_wr:.3g} "
                f"(tau1={t1:.4g}, tau-1={tm:.4g}, var1={v1:.3g}, var-1={vm:.3g}, cov={cv:.3g})"
            )
        se_wr = math.sqrt(var_wr)
        if log_wr:
            half = zq * se_wr / est.wr
            ci_wr = (est.wr * math.exp(-half), est.wr * math.exp(half))
        else:
            ci_wr = (est.wr - zq * se_wr, est.wr + zq * se_wr)
    return est.with_inference(
        var_tau1=v1, var_tau_neg1=vm, cov=cv, var_wr=var_wr, var_wd=var_wd,
        ci_wr=ci_wr, ci_wd=ci_wd, conf_level=conf_level,
    )


def pvr(se_unadj: float, se_method: float) -> float:
    """Percentage of variance removed relative to the unadjusted estimator."""
    if not se_unadj > 0:
        raise ValueError("unadjusted standard error must be positive")
    return (se_unadj**2 - se_method**2) / se_unadj**2 * 100.0


def infer(ds, method: str, models: WorkingModels, conf_level: float = 0.95,
          route: str = "influence_function", log_wr: bool = False):
    """Point estimate plus variance for one method; returns ``(estimate, components)``."""
    est = estimate(ds, method, models)
    if route == "bebu_lachin":
        vc = variance_bebu(ds, est)
    else:
        vc = variance_if(ds, est, models.propensity, models.outcome, models.probs)
    return delta_wr_wd(vc, est, conf_level, log_wr), vc
