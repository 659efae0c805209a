"""Logistic response curves and the softmax nominal model for multiple-choice items.

A dichotomous item is described by a discrimination/difficulty pair (a, b) with
correct-response probability sigma(a * (theta - b)).  A multiple-choice item is
described by one line per option; the softmax of the option scores gives the
choice distribution.  When every distractor line is zero, the correct-option
probability collapses back to a dichotomous curve with the same slope and a
difficulty shifted by log(n_options - 1) / a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import require_finite, require_index
from .exceptions import ValidationError

__all__ = [
    "ItemParams",
    "NominalParams",
    "stable_softmax",
    "p1",
    "p2",
    "nominal_probs",
    "nominal_prob_matrix",
    "nrm_to_2pl",
    "twopl_from_nrm_correct_prob",
]


@dataclass(frozen=True)
class ItemParams:
    """Dichotomous item parameters: discrimination `a` and difficulty `b`.

    `a` carries no sign constraint; negatively discriminating items are legal.
    """

    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        require_finite(self.a, "a")
        require_finite(self.b, "b")


@dataclass(frozen=True)
class NominalParams:
    """Per-option (slope, intercept) lines defining a nominal response model.

    The model is softmax over `slope_i * theta + intercept_i`.  Softmax is
    invariant under adding a common line to every option, so the representation
    is gauge-fixed: the last option's line is pinned to exactly (0, 0).  Build
    instances through :meth:`from_lines` or :meth:`from_item_params`, which
    apply the gauge fix.
    """

    options: tuple[tuple[float, float], ...]
    correct_index: int

    def __post_init__(self):
        opts = tuple((float(s), float(i)) for s, i in self.options)
        object.__setattr__(self, "options", opts)
        if len(opts) < 2:
            raise ValidationError("NominalParams needs at least 2 options")
        for s, i in opts:
            require_finite(s, "slope")
            require_finite(i, "intercept")
        if opts[-1] != (0.0, 0.0):
            raise ValidationError(
                "last option must be the (0, 0) reference line; "
                "use NominalParams.from_lines to gauge-fix arbitrary lines"
            )
        require_index(self.correct_index, len(opts), "correct_index")

    @classmethod
    def from_lines(cls, slopes, intercepts, correct_index: int) -> "NominalParams":
        """Gauge-fix arbitrary option lines by subtracting the last option's line."""
        slopes = np.asarray(slopes, dtype=float)
        intercepts = np.asarray(intercepts, dtype=float)
        if slopes.shape != intercepts.shape or slopes.ndim != 1:
            raise ValidationError("slopes and intercepts must be 1-D and equal length")
        require_finite(slopes, "slopes")
        require_finite(intercepts, "intercepts")
        slopes = slopes - slopes[-1]
        intercepts = intercepts - intercepts[-1]
        slopes[-1] = 0.0
        intercepts[-1] = 0.0
        return cls(tuple(zip(slopes, intercepts)), correct_index)

    @classmethod
    def from_item_params(cls, a1: float, b1: float, n_options: int,
                         correct_index: int = 0) -> "NominalParams":
        """Item whose correct option has line a1*(theta - b1) and whose
        distractors are all zero (wrong answers equally likely)."""
        n = int(n_options)
        if n < 2:
            raise ValidationError("n_options must be >= 2")
        slopes = np.zeros(n)
        intercepts = np.zeros(n)
        slopes[correct_index] = a1
        intercepts[correct_index] = -a1 * b1
        return cls.from_lines(slopes, intercepts, correct_index)

    @property
    def n_options(self) -> int:
        return len(self.options)

    @property
    def slopes(self) -> np.ndarray:
        return np.array([s for s, _ in self.options])

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([i for _, i in self.options])

    def ab_form(self) -> list[tuple[float, float] | None]:
        """Per-option (a_i, b_i) with score a_i*(theta - b_i); None when the
        slope is zero and b_i is undefined."""
        out: list[tuple[float, float] | None] = []
        for s, i in self.options:
            out.append(None if s == 0.0 else (s, -i / s))
        return out


def stable_softmax(scores, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction; safe for scores with magnitude up to ~1e3+."""
    z = np.asarray(scores, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def p2(theta, params: ItemParams):
    """Correct-response probability sigma(a * (theta - b)).

    Accepts a scalar or array `theta`; returns the matching shape.
    """
    require_finite(theta, "theta")
    arr = np.asarray(theta, dtype=float)
    out = expit(params.a * (arr - params.b))
    return float(out) if arr.ndim == 0 else out


def p1(theta, b: float):
    """One-parameter curve: `p2` with discrimination fixed to 1."""
    return p2(theta, ItemParams(1.0, b))


def nominal_probs(theta: float, params: NominalParams) -> np.ndarray:
    """Choice distribution softmax(slope_i * theta + intercept_i) at one theta."""
    require_finite(theta, "theta")
    scores = params.slopes * float(theta) + params.intercepts
    return stable_softmax(scores)


def nominal_prob_matrix(thetas, params: NominalParams) -> np.ndarray:
    """Choice distributions for many thetas, shape (len(thetas), n_options)."""
    t = np.asarray(thetas, dtype=float)
    require_finite(t, "thetas")
    scores = np.outer(t, params.slopes) + params.intercepts
    return stable_softmax(scores, axis=1)


def nrm_to_2pl(a1: float, b1: float, n_options: int) -> ItemParams:
    """Dichotomous equivalent of a zeroed-distractor nominal item:
    (a, b) = (a1, b1 + log(n_options - 1) / a1)."""
    require_finite(a1, "a1")
    require_finite(b1, "b1")
    n = int(n_options)
    if n < 2:
        raise ValidationError("n_options must be >= 2")
    if a1 == 0.0:
        raise ValidationError("a1 = 0 makes the difficulty shift singular")
    return ItemParams(a1, b1 + math.log(n - 1) / a1)


def twopl_from_nrm_correct_prob(theta, a1: float, b1: float, n_options: int):
    """Correct-option probability sigma(a1*(theta - b1) - log(n_options - 1))
    of a zeroed-distractor nominal item; scalar or array `theta`."""
    require_finite(a1, "a1")
    require_finite(b1, "b1")
    require_finite(theta, "theta")
    n = int(n_options)
    if n < 2:
        raise ValidationError("n_options must be >= 2")
    arr = np.asarray(theta, dtype=float)
    out = expit(a1 * (arr - b1) - math.log(n - 1))
    return float(out) if arr.ndim == 0 else out
