"""Estimation procedures, exposed as sklearn-style estimators.

Three fits live here:

* :class:`TwoPLCalibrator` — direct least-squares calibration of (a, b) from
  raw per-student responses with abilities held fixed.
* :class:`NominalSmoother` — weighted least-squares fit of per-option lines to
  binned option frequencies; its softmax gives smoothed per-label
  probabilities.
* :class:`IccRecovery` — weighted least-squares fit of a logistic curve to a
  discrete ICC, recovering (a, b) (or b alone in 1PL mode).

All three minimize with the in-package BFGS and support seeded multi-start.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d_floats, require_index
from .curves import ItemParams, NominalParams, stable_softmax
from .exceptions import (
    CalibrationWarning,
    InsufficientDataError,
    NonIdentifiableError,
    ValidationError,
)
from .optimize import ObjectiveSpec, OptimResult, bfgs_minimize
from .scale import AbilityScale, DiscreteICC

__all__ = [
    "TwoPLCalibrator",
    "NominalSmoother",
    "IccRecovery",
    "recover_from_icc",
    "smoother_icc",
    "write_item_params_csv",
    "read_item_params_csv",
]

_FLAT_A_TOL = 1e-6


def _multi_start(objective: ObjectiveSpec, starts, tol, max_iter, halt=None) -> OptimResult:
    """Run BFGS from each start; the lowest final value wins."""
    best: OptimResult | None = None
    for x0 in starts:
        result = bfgs_minimize(objective, x0, tol=tol, max_iter=max_iter, halt=halt)
        if best is None or result.value < best.value:
            best = result
    return best


def _jittered_starts(x0: np.ndarray, restarts: int, random_state: int) -> list[np.ndarray]:
    starts = [np.asarray(x0, dtype=float)]
    if restarts > 1:
        rng = np.random.default_rng(np.random.SeedSequence(int(random_state), spawn_key=(5,)))
        for _ in range(restarts - 1):
            starts.append(starts[0] + rng.normal(0.0, 1.0, size=starts[0].shape))
    return starts


def _half_crossing(theta: np.ndarray, probs: np.ndarray) -> float:
    """Ability where the curve crosses 0.5, by linear interpolation; 0 if none."""
    shifted = probs - 0.5
    for k in range(theta.size - 1):
        lo, hi = shifted[k], shifted[k + 1]
        if lo == 0.0:
            return float(theta[k])
        if lo * hi < 0:
            frac = lo / (lo - hi)
            return float(theta[k] + frac * (theta[k + 1] - theta[k]))
    if shifted[-1] == 0.0:
        return float(theta[-1])
    return 0.0


class TwoPLCalibrator(BaseEstimator):
    """Fit (a, b) to raw responses by minimizing sum_i (p2(theta_i) - y_i)^2.

    Abilities are treated as known constants.  Fitted attributes: ``a_``,
    ``b_``, ``converged_``, ``objective_``, ``n_iter_``, ``n_used_``.
    Discrimination is left unconstrained in sign but capped at ``a_cap`` in
    magnitude; runs that hit the cap (separable data) are flagged
    non-converged.
    """

    def __init__(self, init_a: float = 1.0, init_b: float = 0.0, tol: float = 1e-8,
                 max_iter: int = 500, restarts: int = 1, a_cap: float = 50.0,
                 random_state: int = 0):
        self.init_a = init_a
        self.init_b = init_b
        self.tol = tol
        self.max_iter = max_iter
        self.restarts = restarts
        self.a_cap = a_cap
        self.random_state = random_state

    def fit(self, theta, y):
        theta = as_1d_floats(theta, "theta")
        y = as_1d_floats(y, "y")
        if theta.shape != y.shape:
            raise ValidationError("theta and y must have equal length")
        if theta.size < 30:
            raise InsufficientDataError(f"need at least 30 responses, got {theta.size}")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValidationError("y must be binary 0/1")
        if y.min() == y.max():
            raise NonIdentifiableError(
                "all responses are identical; (a, b) are not identifiable"
            )

        def fun(x):
            p = expit(x[0] * (theta - x[1]))
            r = p - y
            return float(r @ r)

        def grad(x):
            p = expit(x[0] * (theta - x[1]))
            common = 2.0 * (p - y) * p * (1 - p)
            return np.array([float(common @ (theta - x[1])), float(-x[0] * common.sum())])

        objective = ObjectiveSpec(2, fun, grad)
        cap = float(self.a_cap)
        starts = _jittered_starts(np.array([self.init_a, self.init_b]),
                                  int(self.restarts), self.random_state)
        result = _multi_start(objective, starts, self.tol, int(self.max_iter),
                              halt=lambda x: abs(x[0]) > cap)
        a, b = float(result.x[0]), float(result.x[1])
        capped = abs(a) > cap
        self.a_ = float(np.clip(a, -cap, cap))
        self.b_ = b
        self.converged_ = bool(result.converged and not capped)
        self.objective_ = result.value
        self.n_iter_ = result.iterations
        self.n_used_ = int(theta.size)
        return self

    def item_params(self) -> ItemParams:
        check_is_fitted(self)
        return ItemParams(self.a_, self.b_)

    def predict_proba(self, theta):
        check_is_fitted(self)
        theta = as_1d_floats(theta, "theta")
        return expit(self.a_ * (theta - self.b_))


def _smoother_objective(theta_bar, freqs, weights, n_options):
    """Weighted softmax least squares over gauge-fixed option lines.

    Free parameters are the first n_options - 1 slopes then intercepts; the
    last option's line is pinned to (0, 0).
    """
    m = theta_bar.size

    def unpack(x):
        slopes = np.concatenate([x[: n_options - 1], [0.0]])
        inters = np.concatenate([x[n_options - 1 :], [0.0]])
        return slopes, inters

    def probs_at(x):
        slopes, inters = unpack(x)
        scores = np.outer(theta_bar, slopes) + inters
        return stable_softmax(scores, axis=1)

    def fun(x):
        p = probs_at(x)
        r = p - freqs
        return float((weights[:, None] * r * r).sum())

    def grad(x):
        p = probs_at(x)
        r = p - freqs
        inner = (r * p).sum(axis=1, keepdims=True)
        ds = 2.0 * weights[:, None] * p * (r - inner)   # dL/d score, (m, n)
        g_slopes = (ds * theta_bar[:, None]).sum(axis=0)[: n_options - 1]
        g_inters = ds.sum(axis=0)[: n_options - 1]
        return np.concatenate([g_slopes, g_inters])

    return ObjectiveSpec(2 * (n_options - 1), fun, grad), unpack, probs_at


class NominalSmoother(BaseEstimator):
    """Fit a nominal model to one item's binned option counts.

    The target at populated label k is the frequency vector C_ik / C_k,
    weighted by the label's share of the item's responses C_k / C; empty labels
    contribute nothing.  Fitted attributes: ``slopes_``, ``intercepts_``
    (reference option pinned to zero), ``params_``, ``per_label_probs_`` with
    one probability row per scale label, ``objective_``, ``converged_``,
    ``n_iter_``, ``scale_``.
    """

    def __init__(self, correct_index: int = 0, tol: float = 1e-8, max_iter: int = 500,
                 restarts: int = 1, random_state: int = 0):
        self.correct_index = correct_index
        self.tol = tol
        self.max_iter = max_iter
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, counts, scale: AbilityScale):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != len(scale):
            raise ValidationError(
                f"counts must be (n_labels={len(scale)}, n_options), got {counts.shape}"
            )
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            raise ValidationError("counts must be non-negative integers")
        n_options = counts.shape[1]
        if n_options < 2:
            raise ValidationError("need at least 2 options")
        require_index(self.correct_index, n_options, "correct_index")

        per_label = counts.sum(axis=1)
        total = int(per_label.sum())
        if total == 0:
            raise InsufficientDataError("item has no responses")
        populated = per_label > 0
        m = int(populated.sum())
        if m < 3:
            raise InsufficientDataError(f"need at least 3 populated labels, got {m}")
        if m * n_options < 2 * (n_options - 1):
            raise InsufficientDataError(
                f"{m * n_options} data points cannot identify {2 * (n_options - 1)} line parameters"
            )

        theta_bar = scale.theta_bar[populated]
        freqs = counts[populated] / per_label[populated, None]
        weights = per_label[populated] / total

        objective, unpack, _ = _smoother_objective(theta_bar, freqs, weights, n_options)
        starts = _jittered_starts(np.zeros(2 * (n_options - 1)),
                                  int(self.restarts), self.random_state)
        result = _multi_start(objective, starts, self.tol, int(self.max_iter))

        slopes, inters = unpack(result.x)
        self.slopes_ = slopes
        self.intercepts_ = inters
        self.params_ = NominalParams.from_lines(slopes, inters, int(self.correct_index))
        scores = np.outer(scale.theta_bar, slopes) + inters
        self.per_label_probs_ = stable_softmax(scores, axis=1)
        self.objective_ = result.value
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.scale_ = scale
        return self

    def icc(self, correct_index: int | None = None) -> DiscreteICC:
        """Smoothed correct-option probabilities at every label (none absent)."""
        check_is_fitted(self)
        idx = self.correct_index if correct_index is None else correct_index
        idx = require_index(idx, self.per_label_probs_.shape[1], "correct_index")
        return DiscreteICC(self.per_label_probs_[:, idx], self.scale_)


def smoother_icc(fit: NominalSmoother, correct_option: int | None = None) -> DiscreteICC:
    """The smoothed discrete ICC of a fitted :class:`NominalSmoother`."""
    return fit.icc(correct_option)


class IccRecovery(BaseEstimator):
    """Recover item parameters from a discrete ICC by weighted least squares.

    Minimizes sum_k w_k (P_k - sigma(a (theta_k - b)))^2 over present entries;
    ``model="1pl"`` pins a = 1 and fits b alone.  The difficulty start is the
    curve's 0.5-crossing (linear interpolation, falling back to 0).  Fitted
    attributes: ``a_``, ``b_``, ``converged_``, ``objective_``, ``n_iter_``,
    ``n_used_``.  A flat curve yields a ~ 0 and a :class:`CalibrationWarning`,
    since b is then arbitrary.
    """

    def __init__(self, model: str = "2pl", init_a: float = 1.0, tol: float = 1e-8,
                 max_iter: int = 500, restarts: int = 1, a_cap: float = 50.0,
                 random_state: int = 0):
        self.model = model
        self.init_a = init_a
        self.tol = tol
        self.max_iter = max_iter
        self.restarts = restarts
        self.a_cap = a_cap
        self.random_state = random_state

    def fit(self, theta_bar, probs, sample_weight=None):
        if self.model not in ("2pl", "1pl"):
            raise ValidationError(f"model must be '2pl' or '1pl', got {self.model!r}")
        theta_bar = as_1d_floats(theta_bar, "theta_bar")
        probs = as_1d_floats(probs, "probs", allow_nan=True)
        if theta_bar.shape != probs.shape:
            raise ValidationError("theta_bar and probs must have equal length")
        if sample_weight is None:
            weights = np.ones_like(theta_bar)
        else:
            weights = as_1d_floats(sample_weight, "sample_weight")
            if weights.shape != theta_bar.shape or np.any(weights < 0):
                raise ValidationError("sample_weight must be non-negative, same length")

        keep = np.isfinite(probs) & (weights > 0)
        if int(keep.sum()) < 3:
            raise InsufficientDataError(
                f"need at least 3 present weighted entries, got {int(keep.sum())}"
            )
        t = theta_bar[keep]
        p_obs = probs[keep]
        w = weights[keep]
        b0 = _half_crossing(t, p_obs)
        cap = float(self.a_cap)

        if self.model == "1pl":
            def fun(x):
                r = expit(t - x[0]) - p_obs
                return float(w @ (r * r))

            def grad(x):
                p = expit(t - x[0])
                return np.array([float((2.0 * w * (p - p_obs) * p * (1 - p) * -1.0).sum())])

            objective = ObjectiveSpec(1, fun, grad)
            starts = _jittered_starts(np.array([b0]), int(self.restarts), self.random_state)
            result = _multi_start(objective, starts, self.tol, int(self.max_iter))
            a, b = 1.0, float(result.x[0])
            capped = False
        else:
            def fun(x):
                r = expit(x[0] * (t - x[1])) - p_obs
                return float(w @ (r * r))

            def grad(x):
                p = expit(x[0] * (t - x[1]))
                common = 2.0 * w * (p - p_obs) * p * (1 - p)
                return np.array([float(common @ (t - x[1])), float(-x[0] * common.sum())])

            objective = ObjectiveSpec(2, fun, grad)
            starts = _jittered_starts(np.array([self.init_a, b0]),
                                      int(self.restarts), self.random_state)
            result = _multi_start(objective, starts, self.tol, int(self.max_iter),
                                  halt=lambda x: abs(x[0]) > cap)
            a, b = float(result.x[0]), float(result.x[1])
            capped = abs(a) > cap

        if self.model == "2pl" and abs(a) <= _FLAT_A_TOL:
            warnings.warn(
                "recovered discrimination is ~0 (flat curve); difficulty is arbitrary",
                CalibrationWarning,
                stacklevel=2,
            )
        self.a_ = float(np.clip(a, -cap, cap))
        self.b_ = b
        self.converged_ = bool(result.converged and not capped)
        self.objective_ = result.value
        self.n_iter_ = result.iterations
        self.n_used_ = int(keep.sum())
        return self

    def item_params(self) -> ItemParams:
        check_is_fitted(self)
        return ItemParams(self.a_, self.b_)

    def predict_proba(self, theta):
        check_is_fitted(self)
        theta = as_1d_floats(theta, "theta")
        return expit(self.a_ * (theta - self.b_))


def recover_from_icc(icc: DiscreteICC, model: str = "2pl", **params) -> IccRecovery:
    """Fit an :class:`IccRecovery` to an ICC using its scale's masses as weights."""
    est = IccRecovery(model=model, **params)
    return est.fit(icc.scale.theta_bar, icc.probs, sample_weight=icc.scale.weights)


# ---------------------------------------------------------------------------
# File interface
# ---------------------------------------------------------------------------

def write_item_params_csv(path, rows) -> None:
    """CSV with columns item_id, a, b, converged, objective, n_used.

    `rows` is an iterable of (item_id, a, b, converged, objective, n_used).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "a", "b", "converged", "objective", "n_used"])
        for item_id, a, b, converged, objective, n_used in rows:
            writer.writerow([item_id, repr(float(a)), repr(float(b)),
                             "true" if converged else "false",
                             repr(float(objective)), int(n_used)])


def read_item_params_csv(path) -> list[dict]:
    """Read a params CSV back into a list of dicts."""
    out = []
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                out.append({
                    "item_id": row["item_id"],
                    "a": float(row["a"]),
                    "b": float(row["b"]),
                    "converged": row["converged"] == "true",
                    "objective": float(row["objective"]),
                    "n_used": int(row["n_used"]),
                })
    except (OSError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read item params file {path}: {exc}") from exc
    if not out:
        raise ValidationError(f"item params file {path} is empty")
    return out
