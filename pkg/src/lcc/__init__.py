"""Calibrate a parameterized predictor on a grid so its loss stays below a level with high probability."""

from .engine import (
    CalibrationResult,
    ControlSpec,
    InfeasibleCalibrationError,
    LossMatrix,
    ParamGrid,
    SearchFunction,
    calibrate,
    calibrate_ideal,
    compute_loss_matrix,
    feasible_set,
)
from .multi import LossTensor, MultiControlSpec, calibrate_multi, feasible_set_multi
from .quantiles import augmented_quantile, conservative_quantile, full_quantile

__version__ = "0.1.0"
