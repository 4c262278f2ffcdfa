"""Covariate-adjusted win statistics for ordinal outcomes in two-arm trials."""

from .estimators import METHODS, WinEstimate, estimate, fit_working_models
from .inference import (
    InferenceError,
    VarianceComponents,
    delta_wr_wd,
    infer,
    pvr,
    variance_bebu,
    variance_if,
)
from .logit_fit import FitError
from .trial_data import DataError, TrialDataset, load_csv, recode_direction, validate

__version__ = "0.1.0"

__all__ = [
    "METHODS", "WinEstimate", "estimate", "fit_working_models",
    "InferenceError", "VarianceComponents", "delta_wr_wd", "infer", "pvr",
    "variance_bebu", "variance_if", "FitError", "DataError", "TrialDataset",
    "load_csv", "recode_direction", "validate",
]
