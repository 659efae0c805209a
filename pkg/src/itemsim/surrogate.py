"""Desk-scale stand-in for a fine-tuned student simulator.

A free logit table holds one logit vector per (item, ability label); its
softmax plays the role of a language model's next-token distribution over the
item's options.  Training minimizes the label-mass-weighted squared difference
between those softmaxes and target choice distributions, by plain full-batch
gradient descent with a linear learning-rate decay, global-norm gradient
clipping, and early stopping on a development subset of items.

Files holding per-option probabilities produced by a real model use the JSON
schema read by :func:`load_probs_file`; they can replace the surrogate
entirely downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import require_index
from .curves import stable_softmax
from .exceptions import TrainingError, ValidationError
from .scale import AbilityScale, DiscreteICC

__all__ = [
    "SurrogateStudentModel",
    "surrogate_probs",
    "distribution_loss",
    "distribution_loss_gradient",
    "ItemProbs",
    "load_probs_file",
    "write_probs_file",
]


def _as_target_list(targets, n_labels: int | None = None) -> list[np.ndarray]:
    """Validate targets into a list of (n_labels, n_options) probability arrays."""
    if isinstance(targets, np.ndarray) and targets.ndim == 3:
        targets = list(targets)
    out = []
    for j, t in enumerate(targets):
        arr = np.asarray(t, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ValidationError(f"target {j} must be (n_labels, n_options>=2)")
        if n_labels is not None and arr.shape[0] != n_labels:
            raise ValidationError(f"target {j} has {arr.shape[0]} labels, expected {n_labels}")
        if not np.all(np.isfinite(arr)) or np.any(arr < -1e-9):
            raise ValidationError(f"target {j} has invalid probabilities")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValidationError(f"target {j} rows must sum to 1 within 1e-6")
        out.append(arr)
    if not out:
        raise ValidationError("targets must be non-empty")
    return out


def _as_logit_list(logits) -> list[np.ndarray]:
    if isinstance(logits, np.ndarray) and logits.ndim == 3:
        logits = list(logits)
    out = [np.asarray(z, dtype=float) for z in logits]
    for j, z in enumerate(out):
        if z.ndim != 2:
            raise ValidationError(f"logit slice {j} must be 2-D")
        if not np.all(np.isfinite(z)):
            raise ValidationError(f"logit slice {j} has non-finite entries")
    return out


def _check_weights(weights, n_labels: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_labels,) or np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("weights must be non-negative with one entry per label")
    return w


def distribution_loss(logits, targets, weights) -> float:
    """sum_{items, labels} w_label * ||softmax(z) - target||^2."""
    zs = _as_logit_list(logits)
    ts = _as_target_list(targets)
    if len(zs) != len(ts):
        raise ValidationError("logits and targets must cover the same items")
    w = _check_weights(weights, ts[0].shape[0])
    total = 0.0
    for z, t in zip(zs, ts):
        if z.shape != t.shape:
            raise ValidationError("logit and target shapes must match per item")
        r = stable_softmax(z, axis=1) - t
        total += float((w[:, None] * r * r).sum())
    return total


def distribution_loss_gradient(logits, targets, weights) -> list[np.ndarray]:
    """Exact gradient of :func:`distribution_loss` with respect to the logits.

    Per slice: dL/dz_m = 2 w * p_m * ((p_m - t_m) - sum_i (p_i - t_i) p_i);
    components of each slice sum to zero (softmax shift invariance) and
    zero-weight labels get an exactly zero row.
    """
    zs = _as_logit_list(logits)
    ts = _as_target_list(targets)
    if len(zs) != len(ts):
        raise ValidationError("logits and targets must cover the same items")
    w = _check_weights(weights, ts[0].shape[0])
    grads = []
    for z, t in zip(zs, ts):
        if z.shape != t.shape:
            raise ValidationError("logit and target shapes must match per item")
        p = stable_softmax(z, axis=1)
        r = p - t
        inner = (r * p).sum(axis=1, keepdims=True)
        grads.append(2.0 * w[:, None] * p * (r - inner))
    return grads


def surrogate_probs(logits, item: int, label: int) -> np.ndarray:
    """Choice distribution of one (item, label) cell of a logit table."""
    zs = _as_logit_list(logits)
    j = require_index(item, len(zs), "item")
    k = require_index(label, zs[j].shape[0], "label")
    return stable_softmax(zs[j][k])


class SurrogateStudentModel(BaseEstimator):
    """Trainable per-(item, label) logit table.

    ``fit(targets, sample_weight)`` runs gradient descent from zero logits
    against per-item (n_labels, n_options) target distributions, weighting each
    label row by ``sample_weight``.  The development items (explicit
    ``dev_items`` or a seeded ``dev_fraction`` subset) define the early-stopping
    monitor; the table snapshot with the best dev loss is kept.  Fitted
    attributes: ``logits_``, ``history_`` (per-epoch dev and total loss),
    ``initial_loss_``, ``loss_``, ``n_epochs_``, ``dev_items_``.
    """

    def __init__(self, learning_rate: float = 5e-3, epochs: int = 200,
                 patience: int = 20, dev_fraction: float = 0.15,
                 dev_items=None, clip_norm: float = 1.0, random_state: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.patience = patience
        self.dev_fraction = dev_fraction
        self.dev_items = dev_items
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _pick_dev_items(self, n_items: int) -> np.ndarray:
        if self.dev_items is not None:
            dev = np.unique(np.asarray(self.dev_items, dtype=int))
            if dev.size and (dev.min() < 0 or dev.max() >= n_items):
                raise ValidationError("dev_items out of range")
            return dev
        frac = float(self.dev_fraction)
        if not 0.0 <= frac < 1.0:
            raise ValidationError("dev_fraction must be in [0, 1)")
        n_dev = int(round(frac * n_items))
        if frac > 0.0:
            n_dev = max(1, n_dev)
        if n_dev >= n_items:
            n_dev = n_items - 1
        rng = np.random.default_rng(np.random.SeedSequence(int(self.random_state), spawn_key=(4,)))
        return np.sort(rng.permutation(n_items)[:n_dev])

    def fit(self, targets, sample_weight):
        if float(self.learning_rate) < 0:
            raise ValidationError("learning_rate must be >= 0")
        if int(self.epochs) < 0 or int(self.patience) < 1:
            raise ValidationError("epochs must be >= 0 and patience >= 1")
        ts = _as_target_list(targets)
        n_labels = ts[0].shape[0]
        ts = _as_target_list(ts, n_labels)
        w = _check_weights(sample_weight, n_labels)
        n_items = len(ts)

        dev = self._pick_dev_items(n_items)
        monitor = dev if dev.size else np.arange(n_items)

        # Uniform option counts train as one fused 3-D block; ragged tables
        # fall back to the per-item list path.
        uniform = len({t.shape for t in ts}) == 1
        zs = [np.zeros_like(t) for t in ts]

        def loss_of(idx, table) -> float:
            return distribution_loss([table[j] for j in idx], [ts[j] for j in idx], w)

        lr0 = float(self.learning_rate)
        epochs = int(self.epochs)
        initial = loss_of(range(n_items), zs)
        history_dev: list[float] = []
        history_total: list[float] = []
        best_dev = np.inf
        best_state = [z.copy() for z in zs]
        bad_epochs = 0
        clip = float(self.clip_norm)

        if uniform:
            z3 = np.stack(zs)
            t3 = np.stack(ts)
            w3 = w[None, :, None]

        for epoch in range(epochs):
            lr = lr0 * (1.0 - epoch / epochs)
            if uniform:
                p = stable_softmax(z3, axis=2)
                r = p - t3
                inner = (r * p).sum(axis=2, keepdims=True)
                g3 = 2.0 * w3 * p * (r - inner)
                gnorm = float(np.sqrt((g3 * g3).sum()))
                if clip > 0 and gnorm > clip:
                    g3 = g3 * (clip / gnorm)
                z3 -= lr * g3
                zs = list(z3)
            else:
                grads = distribution_loss_gradient(zs, ts, w)
                gnorm = float(np.sqrt(sum((g * g).sum() for g in grads)))
                scale = clip / gnorm if (clip > 0 and gnorm > clip) else 1.0
                for z, g in zip(zs, grads):
                    z -= lr * scale * g

            total = loss_of(range(n_items), zs)
            dev_loss = loss_of(monitor, zs)
            history_total.append(total)
            history_dev.append(dev_loss)
            if not np.isfinite(total) or total > 10.0 * max(initial, np.finfo(float).tiny):
                raise TrainingError(
                    f"training diverged at epoch {epoch}: loss {total} vs initial {initial}",
                    history={"dev_loss": history_dev, "total_loss": history_total},
                )
            if dev_loss < best_dev:
                best_dev = dev_loss
                best_state = [z.copy() for z in zs]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= int(self.patience):
                    break

        self.logits_ = best_state if epochs > 0 else zs
        self.history_ = {"dev_loss": history_dev, "total_loss": history_total}
        self.initial_loss_ = initial
        self.loss_ = loss_of(range(n_items), self.logits_)
        self.n_epochs_ = len(history_total)
        self.dev_items_ = dev
        self._targets_shape = [t.shape for t in ts]
        return self

    @property
    def n_items_(self) -> int:
        check_is_fitted(self)
        return len(self.logits_)

    def predict_proba(self, item: int) -> np.ndarray:
        """Per-label choice distributions of one item, (n_labels, n_options)."""
        check_is_fitted(self)
        j = require_index(item, len(self.logits_), "item")
        return stable_softmax(self.logits_[j], axis=1)

    def probs(self, item: int, label: int) -> np.ndarray:
        check_is_fitted(self)
        return surrogate_probs(self.logits_, item, label)

    def icc(self, item: int, correct_index: int, scale: AbilityScale) -> DiscreteICC:
        p = self.predict_proba(item)
        idx = require_index(correct_index, p.shape[1], "correct_index")
        return DiscreteICC(p[:, idx], scale)

    def export_iccs(self, correct_indices, scale: AbilityScale) -> list[DiscreteICC]:
        """Correct-option probability curves for every item."""
        check_is_fitted(self)
        if len(correct_indices) != len(self.logits_):
            raise ValidationError("need one correct index per item")
        return [self.icc(j, int(c), scale) for j, c in enumerate(correct_indices)]


# ---------------------------------------------------------------------------
# Probability-file interface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ItemProbs:
    """One item's per-label choice distributions (NaN rows: label not supplied)."""

    item_id: str
    n_options: int
    correct_index: int
    probs: np.ndarray  # (n_labels, n_options)

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def icc(self, scale: AbilityScale) -> DiscreteICC:
        return DiscreteICC(self.probs[:, self.correct_index], scale)


def load_probs_file(path, scale: AbilityScale) -> list[ItemProbs]:
    """Read {"items": [{item_id, options, correct_index, probs: {label: [...]}}]}.

    Each probability vector must have the declared option count, entries in
    [0, 1], and sum to 1 within 1e-4; labels must belong to `scale`.  Labels
    missing from an item become NaN rows (no information at that level).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read probabilities file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("items"), list) or not doc["items"]:
        raise ValidationError('probabilities file must be {"items": [...]} and non-empty')
    label_index = {label: k for k, label in enumerate(scale.labels)}
    out = []
    seen = set()
    for entry in doc["items"]:
        try:
            item_id = str(entry["item_id"])
            n_options = int(entry["options"])
            correct_index = int(entry["correct_index"])
            probs_by_label = entry["probs"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed item entry {entry!r}") from exc
        if item_id in seen:
            raise ValidationError(f"duplicate item_id {item_id!r}")
        seen.add(item_id)
        if n_options < 2:
            raise ValidationError(f"item {item_id!r}: options must be >= 2")
        require_index(correct_index, n_options, f"item {item_id!r} correct_index")
        if not isinstance(probs_by_label, dict) or not probs_by_label:
            raise ValidationError(f"item {item_id!r}: probs must be a non-empty object")
        mat = np.full((len(scale), n_options), np.nan)
        for label, vec in probs_by_label.items():
            if label not in label_index:
                raise ValidationError(f"item {item_id!r}: unknown label {label!r}")
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (n_options,):
                raise ValidationError(
                    f"item {item_id!r} label {label!r}: expected {n_options} probabilities"
                )
            if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
                raise ValidationError(
                    f"item {item_id!r} label {label!r}: probabilities must lie in [0, 1]"
                )
            if abs(float(arr.sum()) - 1.0) > 1e-4:
                raise ValidationError(
                    f"item {item_id!r} label {label!r}: probabilities sum to {arr.sum()}"
                )
            mat[label_index[label]] = arr
        out.append(ItemProbs(item_id, n_options, correct_index, mat))
    return out


def write_probs_file(path, items: list[ItemProbs], scale: AbilityScale) -> None:
    """Write items in the schema read by :func:`load_probs_file` (NaN rows skipped)."""
    doc = {"items": []}
    for item in items:
        probs = {}
        for k, label in enumerate(scale.labels):
            row = item.probs[k]
            if np.all(np.isfinite(row)):
                probs[label] = [float(v) for v in row]
        doc["items"].append({
            "item_id": item.item_id,
            "options": int(item.n_options),
            "correct_index": int(item.correct_index),
            "probs": probs,
        })
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
