"""Point estimators of win probability, loss probability, win ratio and win difference."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import pair_kernels
from .logit_fit import PropensityModel, add_intercept, fit_logistic
from .polr_fit import CategoryProbs, OrdinalModel, category_probs, fit_proportional_odds

METHODS = ("UNADJ", "IPW", "OW", "AIPW", "AOW")
WEIGHTED = ("IPW", "OW")
AUGMENTED = ("AIPW", "AOW")


@dataclass(frozen=True)
class WinEstimate:
    method: str
    tau1: float
    tau_neg1: float
    wr: float  # nan when tau_neg1 == 0
    wd: float
    wr_note: str | None = None
    var_tau1: float | None = None
    var_tau_neg1: float | None = None
    cov: float | None = None
    var_wr: float | None = None
    var_wd: float | None = None
    ci_wr: tuple | None = None
    ci_wd: tuple | None = None
    conf_level: float | None = None

    @property
    def wr_defined(self) -> bool:
        return self.wr_note is None

    @property
    def se_wr(self):
        return None if self.var_wr is None else math.sqrt(self.var_wr)

    @property
    def se_wd(self):
        return None if self.var_wd is None else math.sqrt(self.var_wd)

    def with_inference(self, **kw) -> "WinEstimate":
        return dataclasses.replace(self, **kw)


def assemble(method: str, tau1: float, tau_neg1: float) -> WinEstimate:
    """Build a :class:`WinEstimate`; the ratio is left undefined when no losses."""
    tau1 = float(tau1)
    tau_neg1 = float(tau_neg1)
    if tau_neg1 > 0:
        wr, note = tau1 / tau_neg1, None
    else:
        wr, note = math.nan, "undefined: estimated loss probability is zero"
    return WinEstimate(method=method, tau1=tau1, tau_neg1=tau_neg1, wr=wr,
                       wd=tau1 - tau_neg1, wr_note=note)


def scheme_weights(scheme: str, e_hat, n: int | None = None):
    """Per-subject factors ``(w1, w0, a, b)`` for a scheme.

    Pairwise weights are ``w1_i * w0_j`` for treated ``i`` versus control ``j``
    and ``a_i * b_j`` for the all-pairs augmentation average.
    """
    scheme = scheme.upper()
    if scheme == "UNADJ":
        one = np.ones(n if e_hat is None else len(e_hat))
        return one, one, None, None
    e = np.asarray(e_hat, dtype=float)
    if scheme in ("IPW", "AIPW"):
        w1, w0 = 1.0 / e, 1.0 / (1.0 - e)
    elif scheme in ("OW", "AOW"):
        w1, w0 = 1.0 - e, e
    else:
        raise ValueError(f"unknown method {scheme!r}")
    if scheme == "AIPW":
        one = np.ones_like(e)
        return w1, w0, one, one
    if scheme == "AOW":
        h = e * (1.0 - e)
        return w1, w0, h, h
    return w1, w0, None, None


def taus_from_sums(s: pair_kernels.KernelSums, augmented: bool):
    if s.denom <= 0:
        raise ZeroDivisionError("no treated-control pairs with positive weight")
    if not augmented:
        return s.win_sum / s.denom, s.loss_sum / s.denom
    t1 = (s.win_sum - s.aug_cross_win) / s.denom + s.aug_all_win / s.h_denom
    tm = (s.loss_sum - s.aug_cross_loss) / s.denom + s.aug_all_loss / s.h_denom
    return t1, tm


def point_taus(ds, scheme: str, e_hat=None, cp: CategoryProbs | None = None):
    """``(tau1, tau_neg1)`` for a scheme given fitted propensities / probabilities."""
    w1, w0, a, b = scheme_weights(scheme, e_hat, ds.n)
    aug = scheme.upper() in AUGMENTED
    if aug and cp is None:
        raise ValueError(f"{scheme} needs outcome-model category probabilities")
    s = pair_kernels.factorized_sums(ds, w1, w0, a, b, cp if aug else None)
    return taus_from_sums(s, aug)


def estimate_unadj(ds) -> WinEstimate:
    return assemble("UNADJ", *point_taus(ds, "UNADJ"))


def estimate_weighted(ds, pm: PropensityModel, scheme: str) -> WinEstimate:
    """Hajek-type IPW or OW estimate using the fitted propensity scores."""
    scheme = scheme.upper()
    if scheme not in WEIGHTED:
        raise ValueError(f"weighted scheme must be IPW or OW, got {scheme!r}")
    return assemble(scheme, *point_taus(ds, scheme, pm.e_hat))


def estimate_augmented(ds, pm: PropensityModel, om: OrdinalModel, scheme: str,
                       cp: CategoryProbs | None = None) -> WinEstimate:
    """AIPW or AOW estimate: weighted residual term plus all-pairs model average."""
    scheme = scheme.upper()
    if scheme not in AUGMENTED:
        raise ValueError(f"augmented scheme must be AIPW or AOW, got {scheme!r}")
    if cp is None:
        cp = category_probs(om, outcome_covariates(ds, om))
    return assemble(scheme, *point_taus(ds, scheme, pm.e_hat, cp))


def _cols(x, columns):
    return x if columns is None else x[:, list(columns)]


def propensity_covariates(ds, pm) -> np.ndarray:
    return _cols(ds.x, getattr(pm, "columns", None))


def outcome_covariates(ds, om) -> np.ndarray:
    return _cols(ds.x, getattr(om, "columns", None))


@dataclass(frozen=True)
class WorkingModels:
    propensity: PropensityModel | None = None
    outcome: OrdinalModel | None = None
    probs: CategoryProbs | None = None


def fit_working_models(ds, methods=METHODS, ps_columns=None, om_columns=None,
                       feature_map="linear") -> WorkingModels:
    """Fit the models ``methods`` need; covariate columns may differ per model."""
    methods = [m.upper() for m in methods]
    pm = om = cp = None
    if any(m != "UNADJ" for m in methods):
        pm = fit_logistic(_cols(ds.x, ps_columns), ds.z)
        if ps_columns is not None:
            pm = dataclasses.replace(pm, columns=tuple(ps_columns))
    if any(m in AUGMENTED for m in methods):
        xo = _cols(ds.x, om_columns)
        om = fit_proportional_odds(xo, ds.z, ds.y, feature_map, n_levels=ds.n_levels)
        if om_columns is not None:
            om = dataclasses.replace(om, columns=tuple(om_columns))
        cp = category_probs(om, xo)
    return WorkingModels(pm, om, cp)


def estimate(ds, method: str, models: WorkingModels) -> WinEstimate:
    method = method.upper()
    if method == "UNADJ":
        return estimate_unadj(ds)
    if method in WEIGHTED:
        return estimate_weighted(ds, models.propensity, method)
    if method in AUGMENTED:
        return estimate_augmented(ds, models.propensity, models.outcome, method, models.probs)
    raise ValueError(f"unknown method {method!r}")


def propensity_at(ds, pm, beta) -> np.ndarray:
    """Propensity scores at an arbitrary coefficient vector."""
    return expit(add_intercept(propensity_covariates(ds, pm)) @ beta)
