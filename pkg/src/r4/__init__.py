"""Robust reduced-rank regression: joint low-rank fitting and outlier detection."""

from .exceptions import Infeasible, InvalidInput, NotPositiveDefinite, OutputError, R4Error
from .rrr import RegressionData, rrr_fit, rrr_ridge_fit, singular_value_shrink_fit
from .solver import (
    Constrained,
    FitResult,
    PenalizedElementwise,
    PenalizedRowwise,
    R4Problem,
    SolverOptions,
    multistart_fit,
    r4_fit,
)
from .thresholding import ThresholdRule
from .tuning import GridSpec, PathResult, fit_path, pic

__version__ = "0.1.0"

__all__ = [
    "Constrained", "FitResult", "GridSpec", "Infeasible", "InvalidInput", "NotPositiveDefinite",
    "OutputError", "PathResult", "PenalizedElementwise", "PenalizedRowwise", "R4Error",
    "R4Problem", "RegressionData", "SolverOptions", "ThresholdRule", "fit_path",
    "multistart_fit", "pic", "r4_fit", "rrr_fit", "rrr_ridge_fit", "singular_value_shrink_fit",
]
