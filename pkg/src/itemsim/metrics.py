"""Evaluation metrics and the dev-set linear bias correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_1d_floats
from .exceptions import ValidationError
from .optimize import ols_fit

__all__ = ["pearson", "rmse", "BiasCorrection", "fit_bias_correction", "apply_bias_correction"]


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; undefined (error) when either side is constant."""
    x = as_1d_floats(xs, "xs")
    y = as_1d_floats(ys, "ys")
    if x.shape != y.shape or x.size < 2:
        raise ValidationError("need two equal-length vectors with at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise ValidationError("pearson is undefined for zero-variance input")
    return float(np.clip((dx @ dy) / math.sqrt(vx * vy), -1.0, 1.0))


def rmse(xs, ys) -> float:
    """Root mean squared difference between two equal-length vectors."""
    x = as_1d_floats(xs, "xs")
    y = as_1d_floats(ys, "ys")
    if x.shape != y.shape or x.size == 0:
        raise ValidationError("need two equal-length non-empty vectors")
    d = x - y
    return float(math.sqrt((d @ d) / d.size))


@dataclass(frozen=True)
class BiasCorrection:
    """Linear map pred -> slope * pred + intercept, fitted on dev items."""

    slope: float
    intercept: float
    fitted_on: int

    def __post_init__(self):
        if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
            raise ValidationError("bias correction coefficients must be finite")
        if self.fitted_on < 2:
            raise ValidationError("bias correction needs at least 2 dev items")


def fit_bias_correction(pred_dev, true_dev) -> BiasCorrection:
    """Regress true values on predictions (OLS); counteracts shrinkage toward
    the mean in recovered parameters."""
    pred = as_1d_floats(pred_dev, "pred_dev")
    true = as_1d_floats(true_dev, "true_dev")
    slope, intercept = ols_fit(pred, true)
    return BiasCorrection(slope, intercept, pred.size)


def apply_bias_correction(correction: BiasCorrection, preds):
    """Elementwise slope * x + intercept."""
    arr = np.asarray(preds, dtype=float)
    out = correction.slope * arr + correction.intercept
    return float(out) if arr.ndim == 0 else out
