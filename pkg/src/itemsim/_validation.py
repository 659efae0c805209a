"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def require_finite(value, name: str) -> None:
    """Raise ValidationError unless every entry of `value` is finite."""
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite, got {value!r}")


def as_1d_floats(value, name: str, *, allow_nan: bool = False) -> np.ndarray:
    """Coerce to a 1-D float array, rejecting inf (and NaN unless allowed)."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    bad = np.isinf(arr) if allow_nan else ~np.isfinite(arr)
    if np.any(bad):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def require_prob_vector(vec, name: str, *, tol: float = 1e-6) -> np.ndarray:
    """Check `vec` is a probability vector (entries in [0,1], sums to 1 within tol)."""
    arr = as_1d_floats(vec, name)
    if arr.size < 1:
        raise ValidationError(f"{name} is empty")
    if np.any(arr < -tol) or np.any(arr > 1 + tol):
        raise ValidationError(f"{name} has entries outside [0, 1]")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{name} sums to {total}, expected 1 within {tol}")
    return arr


def require_index(idx, size: int, name: str) -> int:
    """Check `idx` is an integer index into a collection of length `size`."""
    i = int(idx)
    if i != idx or not 0 <= i < size:
        raise ValidationError(f"{name}={idx!r} out of range [0, {size})")
    return i


def require_positive(value, name: str) -> float:
    x = float(value)
    if not np.isfinite(x) or x <= 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return x
