"""Virtual field test: draw examinee abilities, sample option choices from
ground-truth nominal models, and aggregate option counts by ability label.

Randomness discipline
---------------------
Every consumer derives an independent substream from the caller's seed through
``numpy.random.SeedSequence`` spawn keys: population draws use key ``(0,)`` and
item ``j``'s response draws use key ``(1, j)``, with the i-th variate of that
stream reserved for student ``i``.  The variate behind any (student, item) pair
is therefore fixed by the seed alone — response sampling is reproducible and
independent of the order in which items are processed.  Ability draws map
uniforms through the normal inverse CDF.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from ._validation import require_index
from .curves import NominalParams, nominal_prob_matrix
from .exceptions import InsufficientDataError, ValidationError
from .scale import AbilityScale, DiscreteICC, PopulationPrior

__all__ = [
    "Population",
    "ResponseRecord",
    "ResponseRecords",
    "BinnedCounts",
    "sample_population",
    "sample_responses",
    "bin_responses",
    "empirical_icc",
    "item_response_arrays",
    "write_responses_csv",
    "read_responses_csv",
    "write_counts_json",
    "read_counts_json",
]

_STREAM_POPULATION = 0
_STREAM_RESPONSES = 1


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass(frozen=True)
class Population:
    """Sampled examinee abilities; reproducible from `seed`."""

    thetas: np.ndarray
    seed: int

    def __post_init__(self):
        arr = np.asarray(self.thetas, dtype=float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "thetas", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("thetas must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("thetas must be finite")

    @property
    def n_students(self) -> int:
        return self.thetas.size


@dataclass(frozen=True)
class ResponseRecord:
    student: int
    item: int
    option_chosen: int
    correct: bool


@dataclass(frozen=True)
class ResponseRecords:
    """Columnar batch of response records (one row per student-item pair)."""

    student: np.ndarray
    item: np.ndarray
    option_chosen: np.ndarray
    correct: np.ndarray
    option_counts: np.ndarray  # per item

    def __post_init__(self):
        for name, dtype in (("student", np.int64), ("item", np.int64),
                            ("option_chosen", np.int64), ("correct", np.bool_),
                            ("option_counts", np.int64)):
            arr = np.asarray(getattr(self, name), dtype=dtype).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.student.size
        if not (self.item.size == self.option_chosen.size == self.correct.size == n):
            raise ValidationError("record columns must have equal length")

    def __len__(self) -> int:
        return self.student.size

    def __getitem__(self, i: int) -> ResponseRecord:
        return ResponseRecord(
            int(self.student[i]),
            int(self.item[i]),
            int(self.option_chosen[i]),
            bool(self.correct[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def n_items(self) -> int:
        return self.option_counts.size


def sample_population(n: int, prior: PopulationPrior, seed: int) -> Population:
    """Draw n i.i.d. abilities from the prior via the inverse-CDF transform."""
    if int(n) < 1:
        raise ValidationError("population size must be >= 1")
    u = _substream(seed, _STREAM_POPULATION).random(int(n))
    u = np.clip(u, np.finfo(float).tiny, 1 - np.finfo(float).eps)
    thetas = prior.mu + prior.sigma * ndtri(u)
    return Population(thetas, int(seed))


def sample_responses(pop: Population, items: list[NominalParams], seed: int) -> ResponseRecords:
    """One categorical draw per (student, item) pair from each item's choice
    distribution at the student's ability.  Records are item-major."""
    if not items:
        raise ValidationError("items must be non-empty")
    n = pop.n_students
    students = np.arange(n, dtype=np.int64)
    cols_student, cols_item, cols_opt, cols_correct = [], [], [], []
    for j, item in enumerate(items):
        u = _substream(seed, _STREAM_RESPONSES, j).random(n)
        probs = nominal_prob_matrix(pop.thetas, item)
        cdf = np.cumsum(probs, axis=1)
        choice = np.minimum((u[:, None] > cdf).sum(axis=1), item.n_options - 1)
        cols_student.append(students)
        cols_item.append(np.full(n, j, dtype=np.int64))
        cols_opt.append(choice.astype(np.int64))
        cols_correct.append(choice == item.correct_index)
    return ResponseRecords(
        np.concatenate(cols_student),
        np.concatenate(cols_item),
        np.concatenate(cols_opt),
        np.concatenate(cols_correct),
        np.array([item.n_options for item in items], dtype=np.int64),
    )


@dataclass(frozen=True)
class BinnedCounts:
    """Integer tally C[item, label, option]; marginals are exact sums.

    The option axis is sized for the widest item; slots past an item's own
    option count are structurally zero.
    """

    counts: np.ndarray       # (n_items, n_labels, max_options) int64
    scale: AbilityScale
    option_counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        opt = np.asarray(self.option_counts, dtype=np.int64).copy()
        opt.flags.writeable = False
        object.__setattr__(self, "option_counts", opt)
        if counts.ndim != 3:
            raise ValidationError("counts must be (n_items, n_labels, n_options)")
        if counts.shape[1] != len(self.scale):
            raise ValidationError("label axis does not match the scale")
        if counts.shape[0] != opt.size:
            raise ValidationError("option_counts must have one entry per item")
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")

    @property
    def n_items(self) -> int:
        return self.counts.shape[0]

    def per_label(self, item: int) -> np.ndarray:
        """C_jk: responses to `item` by label."""
        return self.counts[item].sum(axis=1)

    def total(self, item: int) -> int:
        """C_j: total responses to `item`."""
        return int(self.counts[item].sum())

    def item_matrix(self, item: int) -> np.ndarray:
        """(n_labels, n_options) count matrix trimmed to the item's options."""
        j = require_index(item, self.n_items, "item")
        return self.counts[j, :, : int(self.option_counts[j])]


def bin_responses(records: ResponseRecords, pop: Population, scale: AbilityScale) -> BinnedCounts:
    """Tally option choices by (item, ability label)."""
    n_items = records.n_items
    n_labels = len(scale)
    max_opt = int(records.option_counts.max()) if n_items else 0
    if len(records) and (records.student.max() >= pop.n_students or records.student.min() < 0):
        raise ValidationError("records reference students outside the population")
    labels = scale.label_index(pop.thetas)[records.student]
    flat = (records.item * n_labels + labels) * max_opt + records.option_chosen
    counts = np.bincount(flat, minlength=n_items * n_labels * max_opt)
    counts = counts.reshape(n_items, n_labels, max_opt)
    return BinnedCounts(counts, scale, records.option_counts)


def empirical_icc(counts: BinnedCounts, item: int, correct_option: int) -> DiscreteICC:
    """Per-label correct fraction; labels with no responses are NaN (absent)."""
    j = require_index(item, counts.n_items, "item")
    require_index(correct_option, int(counts.option_counts[j]), "correct_option")
    per_label = counts.per_label(j)
    if not per_label.any():
        raise InsufficientDataError(f"item {j} has no responses in any label")
    with np.errstate(invalid="ignore"):
        probs = np.where(per_label > 0, counts.counts[j, :, correct_option] / per_label, np.nan)
    return DiscreteICC(probs, counts.scale)


def item_response_arrays(records: ResponseRecords, pop: Population, item: int):
    """(theta, y) arrays for one item's responses, for direct calibration."""
    j = require_index(item, records.n_items, "item")
    mask = records.item == j
    thetas = pop.thetas[records.student[mask]]
    y = records.correct[mask].astype(float)
    return thetas, y


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------

def write_responses_csv(path, records: ResponseRecords, pop: Population) -> None:
    """CSV with columns student_id, item_id, option_chosen, theta."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "item_id", "option_chosen", "theta"])
        thetas = pop.thetas
        for i in range(len(records)):
            s = int(records.student[i])
            writer.writerow([s, int(records.item[i]), int(records.option_chosen[i]),
                             repr(float(thetas[s]))])


def read_responses_csv(path, items: list[NominalParams]) -> tuple[ResponseRecords, Population]:
    """Rebuild records and the population from a responses CSV.

    `items` supplies option counts and correct indices (correctness is not
    stored in the file).  Student ids must be 0-based indices.
    """
    students, item_ids, options = [], [], []
    theta_by_student: dict[int, float] = {}
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                s = int(row["student_id"])
                j = int(row["item_id"])
                students.append(s)
                item_ids.append(j)
                options.append(int(row["option_chosen"]))
                theta_by_student[s] = float(row["theta"])
    except (OSError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read responses file {path}: {exc}") from exc
    if not students:
        raise ValidationError(f"responses file {path} is empty")
    n_students = max(theta_by_student) + 1
    if set(theta_by_student) != set(range(n_students)):
        raise ValidationError("student ids must be contiguous 0-based indices")
    thetas = np.array([theta_by_student[s] for s in range(n_students)])
    student = np.array(students, dtype=np.int64)
    item = np.array(item_ids, dtype=np.int64)
    option = np.array(options, dtype=np.int64)
    if item.min() < 0 or item.max() >= len(items):
        raise ValidationError("responses reference unknown items")
    correct_idx = np.array([it.correct_index for it in items], dtype=np.int64)
    opt_counts = np.array([it.n_options for it in items], dtype=np.int64)
    if np.any(option < 0) or np.any(option >= opt_counts[item]):
        raise ValidationError("option_chosen out of range for its item")
    records = ResponseRecords(student, item, option, option == correct_idx[item], opt_counts)
    return records, Population(thetas, seed=-1)


def write_counts_json(path, counts: BinnedCounts, item_ids: list[str] | None = None) -> None:
    """JSON mapping item id -> label -> per-option count array."""
    ids = item_ids if item_ids is not None else [str(j) for j in range(counts.n_items)]
    if len(ids) != counts.n_items:
        raise ValidationError("item_ids length must match the number of items")
    doc = {}
    for j, item_id in enumerate(ids):
        mat = counts.item_matrix(j)
        doc[str(item_id)] = {
            label: [int(c) for c in mat[k]] for k, label in enumerate(counts.scale.labels)
        }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_counts_json(path, scale: AbilityScale) -> tuple[BinnedCounts, list[str]]:
    """Read a counts file back; returns the counts and the item ids in file order."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read counts file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not doc:
        raise ValidationError("counts file must be a non-empty object")
    label_index = {label: k for k, label in enumerate(scale.labels)}
    item_ids = list(doc)
    per_item = []
    opt_counts = []
    for item_id in item_ids:
        rows = doc[item_id]
        if not isinstance(rows, dict) or not rows:
            raise ValidationError(f"item {item_id!r} has no label rows")
        unknown = set(rows) - set(label_index)
        if unknown:
            raise ValidationError(f"item {item_id!r} has labels not in the scale: {sorted(unknown)}")
        widths = {len(v) for v in rows.values()}
        if len(widths) != 1:
            raise ValidationError(f"item {item_id!r} has inconsistent option-array lengths")
        n_opt = widths.pop()
        if n_opt < 2:
            raise ValidationError(f"item {item_id!r} needs at least 2 options")
        mat = np.zeros((len(scale), n_opt), dtype=np.int64)
        for label, arr in rows.items():
            vals = np.asarray(arr)
            if np.any(vals < 0) or not np.issubdtype(vals.dtype, np.integer):
                raise ValidationError(f"item {item_id!r} label {label!r} has invalid counts")
            mat[label_index[label]] = vals
        per_item.append(mat)
        opt_counts.append(n_opt)
    max_opt = max(opt_counts)
    counts = np.zeros((len(item_ids), len(scale), max_opt), dtype=np.int64)
    for j, mat in enumerate(per_item):
        counts[j, :, : mat.shape[1]] = mat
    return BinnedCounts(counts, scale, np.array(opt_counts, dtype=np.int64)), item_ids
