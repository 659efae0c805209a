"""Self-contained numerical optimization.

BFGS with a backtracking Armijo line search, central-difference gradients as
fallback and verification, and closed-form ordinary least squares for the
bias-correction regression.  Small and deliberately boring: the objectives in
this package are smooth and low-dimensional.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import require_finite
from .exceptions import OptimizationError, ValidationError

__all__ = [
    "ObjectiveSpec",
    "OptimResult",
    "bfgs_minimize",
    "finite_diff_gradient",
    "check_gradient",
    "ols_fit",
]

_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_MAX_BACKTRACKS = 60
_CURVATURE_EPS = 1e-10


@dataclass(frozen=True)
class ObjectiveSpec:
    """A scalar objective on R^d with an optional analytic gradient."""

    dimension: int
    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class OptimResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    gradient_norm: float


def finite_diff_gradient(obj: ObjectiveSpec, x, h=1e-6) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / (2 h).

    `h` may be a scalar or a per-component array of positive steps.
    """
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if np.any(steps <= 0):
        raise ValidationError("finite-difference step h must be positive")
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        hi = obj.fun(x + e)
        lo = obj.fun(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OptimizationError("non-finite objective in finite differences", last_x=x)
        g[i] = (hi - lo) / (2 * steps[i])
    return g


def check_gradient(obj: ObjectiveSpec, x, h=None) -> float:
    """Relative discrepancy between the analytic gradient and central differences.

    Returns ||g_analytic - g_fd||_inf / (1 + ||g_fd||_inf); the default step is
    1e-6 * (1 + |x_i|) per component.
    """
    if obj.grad is None:
        raise ValidationError("objective has no analytic gradient to check")
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-6 * (1 + np.abs(x))
    g = np.asarray(obj.grad(x), dtype=float)
    gfd = finite_diff_gradient(obj, x, h)
    return float(np.max(np.abs(g - gfd)) / (1 + np.max(np.abs(gfd))))


def _gradient(obj: ObjectiveSpec, x: np.ndarray) -> np.ndarray:
    if obj.grad is not None:
        return np.asarray(obj.grad(x), dtype=float)
    return finite_diff_gradient(obj, x, 1e-6 * (1 + np.abs(x)))


def bfgs_minimize(
    obj: ObjectiveSpec,
    x0,
    tol: float = 1e-8,
    max_iter: int = 500,
    halt: Callable[[np.ndarray], bool] | None = None,
) -> OptimResult:
    """Minimize `obj` from `x0`; converged when the gradient inf-norm <= tol.

    The inverse-Hessian approximation stays positive definite by skipping
    updates whose curvature s'y is not safely positive.  An optional `halt`
    callback inspects each accepted iterate and may stop the search early
    (reported as not converged).  Accepted steps always decrease the objective,
    so the returned value never exceeds the value at `x0`.
    """
    require_finite(x0, "x0")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if x.ndim != 1:
        x = x.reshape(-1)

    f = float(obj.fun(x))
    if not np.isfinite(f):
        raise OptimizationError("objective is non-finite at x0", last_x=x)
    g = _gradient(obj, x)
    if not np.all(np.isfinite(g)):
        raise OptimizationError("gradient is non-finite at x0", last_x=x)

    d = x.size
    identity = np.eye(d)
    h_inv = identity.copy()
    first_update = True
    iterations = 0
    converged = False

    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            converged = True
            break

        p = -h_inv @ g
        g_dot_p = float(g @ p)
        if g_dot_p >= 0:  # numerical loss of descent; restart from steepest descent
            h_inv = identity.copy()
            first_update = True
            p = -g
            g_dot_p = float(g @ p)

        step = 1.0
        x_new = f_new = None
        for _ in range(_MAX_BACKTRACKS):
            trial = x + step * p
            f_trial = float(obj.fun(trial))
            if np.isfinite(f_trial) and f_trial <= f + _ARMIJO_C * step * g_dot_p:
                x_new, f_new = trial, f_trial
                break
            step *= _ARMIJO_SHRINK
        if x_new is None:
            break  # no acceptable step; stop at the current iterate

        g_new = _gradient(obj, x_new)
        if not np.all(np.isfinite(g_new)):
            raise OptimizationError("gradient became non-finite during search", last_x=x)

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > _CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                h_inv = (sy / float(y @ y)) * identity
                first_update = False
            rho = 1.0 / sy
            v = identity - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)

        x, f, g = x_new, f_new, g_new
        iterations += 1
        if halt is not None and halt(x):
            break
    else:
        # loop exhausted max_iter; check convergence at the final iterate
        converged = float(np.max(np.abs(g))) <= tol

    return OptimResult(
        x=x,
        value=f,
        iterations=iterations,
        converged=converged,
        gradient_norm=float(np.max(np.abs(g))),
    )


def ols_fit(xs, ys) -> tuple[float, float]:
    """Least-squares line: returns (slope, intercept) minimizing
    sum (y - (slope*x + intercept))^2, in closed form."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    require_finite(x, "xs")
    require_finite(y, "ys")
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError("xs and ys must be 1-D and of equal length")
    if x.size < 2:
        raise ValidationError("need at least 2 points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValidationError("xs are all identical; slope is undefined")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    return slope, intercept
