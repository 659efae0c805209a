"""Discretized ability scale: ordered descriptor labels over theta intervals.

A scale partitions the real line with cut points -inf = c_0 < c_1 < ... < c_N = +inf.
Label k owns the right-closed interval (c_{k-1}, c_k].  Under a normal population
prior N(mu, sigma^2) each label carries a conditional mean

    theta_bar_k = mu + sigma^2 * (f(c_{k-1}) - f(c_k)) / (F(c_k) - F(c_{k-1}))

(f, F the prior's pdf/cdf) and a mass weight omega_k = F(c_k) - F(c_{k-1}).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._validation import require_finite, require_positive
from .exceptions import ValidationError

__all__ = [
    "PopulationPrior",
    "AbilityScale",
    "DiscreteICC",
    "build_ability_scale",
    "label_for_theta",
    "default_scale",
    "load_scale",
    "save_scale",
    "DEFAULT_PRIOR",
    "DEFAULT_LEVELS",
]

# Twenty shipped descriptor levels: (label, upper bound).  The last upper bound
# is +inf; the first interval starts at -inf.
DEFAULT_LEVELS: tuple[tuple[str, float], ...] = (
    ("Critical", -3.0),
    ("Severely Limited", -2.7),
    ("Deficient", -2.4),
    ("Inadequate", -2.1),
    ("Minimal", -1.8),
    ("Emerging", -1.2),
    ("Developing", -0.9),
    ("Approaching Basic", -0.6),
    ("Basic", -0.3),
    ("Functional", 0.0),
    ("Satisfactory", 0.3),
    ("Competent", 0.6),
    ("Proficient", 0.9),
    ("Accomplished", 1.2),
    ("Advanced", 1.5),
    ("Superior", 1.8),
    ("Exceptional", 2.1),
    ("Outstanding", 2.4),
    ("Distinguished", 2.7),
    ("Exemplary", math.inf),
)

_MIN_WEIGHT = 1e-300


@dataclass(frozen=True)
class PopulationPrior:
    """Normal prior N(mu, sigma^2) over latent ability."""

    mu: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        require_finite(self.mu, "mu")
        require_positive(self.sigma, "sigma")


DEFAULT_PRIOR = PopulationPrior(0.13, 1.15)


def _norm_pdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    z = (x - mu) / sigma
    with np.errstate(over="ignore"):
        return np.where(np.isinf(x), 0.0, np.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi)))


def _norm_cdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return ndtr((x - mu) / sigma)


@dataclass(frozen=True)
class AbilityScale:
    """Immutable label partition with cached conditional means and weights."""

    labels: tuple[str, ...]
    bounds: np.ndarray      # length N+1, bounds[0] = -inf, bounds[-1] = +inf
    theta_bar: np.ndarray   # length N, strictly increasing
    weights: np.ndarray     # length N, sums to 1
    prior: PopulationPrior

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        for name in ("bounds", "theta_bar", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = len(self.labels)
        if n < 1:
            raise ValidationError("scale needs at least one label")
        if self.bounds.shape != (n + 1,) or self.theta_bar.shape != (n,) or self.weights.shape != (n,):
            raise ValidationError("inconsistent scale array lengths")
        if not (np.isneginf(self.bounds[0]) and np.isposinf(self.bounds[-1])):
            raise ValidationError("outer bounds must be -inf and +inf")
        if not np.all(np.diff(self.bounds) > 0):
            raise ValidationError("bounds must be strictly increasing")
        if np.any(self.weights < _MIN_WEIGHT):
            raise ValidationError("a label interval carries (numerically) zero mass")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValidationError("weights must sum to 1 within 1e-12")
        if not np.all(np.diff(self.theta_bar) > 0):
            raise ValidationError("conditional means must be strictly increasing")
        if np.any(self.theta_bar <= self.bounds[:-1]) or np.any(self.theta_bar >= self.bounds[1:]):
            raise ValidationError("each conditional mean must lie inside its interval")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_levels(self) -> int:
        return len(self.labels)

    def label_index(self, theta):
        """Index k of the label owning theta: bounds[k] < theta <= bounds[k+1].

        Right-closed: a theta equal to an interior cut belongs to the lower label.
        Scalar in, int out; array in, int array out.
        """
        require_finite(theta, "theta")
        arr = np.asarray(theta, dtype=float)
        idx = np.searchsorted(self.bounds[1:-1], arr, side="left")
        return int(idx) if arr.ndim == 0 else idx


def label_for_theta(theta: float, scale: AbilityScale) -> int:
    """Index of the unique label whose interval contains `theta`."""
    return scale.label_index(theta)


def build_ability_scale(labels, cuts, prior: PopulationPrior) -> AbilityScale:
    """Build a scale from N labels and the N-1 finite interior cut points."""
    labels = tuple(str(s) for s in labels)
    cuts = np.asarray(cuts, dtype=float)
    if cuts.shape != (len(labels) - 1,):
        raise ValidationError(
            f"expected {len(labels) - 1} interior cut points for {len(labels)} labels, "
            f"got {cuts.size}"
        )
    require_finite(cuts, "cuts")
    if cuts.size and not np.all(np.diff(cuts) > 0):
        raise ValidationError("cut points must be strictly increasing")

    bounds = np.concatenate(([-math.inf], cuts, [math.inf]))
    cdf = _norm_cdf(bounds, prior.mu, prior.sigma)
    pdf = _norm_pdf(bounds, prior.mu, prior.sigma)
    weights = np.diff(cdf)
    if np.any(weights < _MIN_WEIGHT):
        k = int(np.argmin(weights))
        raise ValidationError(f"interval for label {labels[k]!r} has zero probability mass")
    theta_bar = prior.mu + prior.sigma ** 2 * (pdf[:-1] - pdf[1:]) / weights
    return AbilityScale(labels, bounds, theta_bar, weights, prior)


def default_scale(prior: PopulationPrior | None = None) -> AbilityScale:
    """The shipped twenty-level scale under `prior` (default N(0.13, 1.15^2))."""
    prior = DEFAULT_PRIOR if prior is None else prior
    labels = [label for label, _ in DEFAULT_LEVELS]
    cuts = [ub for _, ub in DEFAULT_LEVELS[:-1]]
    return build_ability_scale(labels, cuts, prior)


@dataclass(frozen=True)
class DiscreteICC:
    """Correct-response probabilities at each label's conditional mean.

    NaN entries mark labels with no backing data; they carry zero weight in
    downstream fits.
    """

    probs: np.ndarray
    scale: AbilityScale

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)
        if arr.shape != (len(self.scale),):
            raise ValidationError(
                f"ICC length {arr.shape} does not match scale size {len(self.scale)}"
            )
        if np.any(np.isinf(arr)):
            raise ValidationError("ICC probabilities must be finite or NaN")
        finite = arr[np.isfinite(arr)]
        if np.any(finite < -1e-12) or np.any(finite > 1 + 1e-12):
            raise ValidationError("ICC probabilities must lie in [0, 1]")

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.probs)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())


def _parse_scale_dict(doc: dict) -> AbilityScale:
    try:
        prior = PopulationPrior(doc["prior"]["mu"], doc["prior"]["sigma"])
        entries = doc["labels"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scale config: missing {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise ValidationError("scale config 'labels' must be a non-empty array")
    labels = []
    uppers = []
    for entry in entries:
        try:
            labels.append(str(entry["label"]))
            uppers.append(entry["upper_bound"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scale label entry {entry!r}") from exc
    if not (isinstance(uppers[-1], str) and uppers[-1].lower() == "inf"):
        raise ValidationError('last label must have upper_bound "inf"')
    cuts = []
    for ub in uppers[:-1]:
        if isinstance(ub, str):
            raise ValidationError('only the last upper_bound may be "inf"')
        cuts.append(float(ub))
    return build_ability_scale(labels, cuts, prior)


def load_scale(path) -> AbilityScale:
    """Load a scale config: {"prior": {mu, sigma}, "labels": [{label, upper_bound}]}.

    The last entry's upper_bound must be the string "inf"; the first label's
    lower bound is implicitly -inf.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read scale config {path}: {exc}") from exc
    return _parse_scale_dict(doc)


def save_scale(scale: AbilityScale, path) -> None:
    """Write a scale back out in the config format accepted by `load_scale`."""
    entries = []
    for k, label in enumerate(scale.labels):
        ub = scale.bounds[k + 1]
        entries.append({"label": label, "upper_bound": "inf" if math.isinf(ub) else float(ub)})
    doc = {"prior": {"mu": scale.prior.mu, "sigma": scale.prior.sigma}, "labels": entries}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
