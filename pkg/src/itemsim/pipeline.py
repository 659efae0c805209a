"""End-to-end orchestration: simulate, bin, smooth, train or ingest a student
model, recover item parameters, bias-correct on a dev split, and report
Pearson/RMSE per regime.  All file outputs are plain CSV/JSON and byte-stable
for a fixed config and seed.
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .calibrate import IccRecovery, NominalSmoother, write_item_params_csv
from .curves import ItemParams, NominalParams
from .exceptions import PipelineStageError, ItemsimError, ValidationError
from .metrics import BiasCorrection, apply_bias_correction, fit_bias_correction, pearson, rmse
from .scale import AbilityScale, DiscreteICC, PopulationPrior, default_scale, load_scale
from .simulate import (
    bin_responses,
    empirical_icc,
    sample_population,
    sample_responses,
    write_counts_json,
    write_responses_csv,
)
from .surrogate import ItemProbs, SurrogateStudentModel, load_probs_file, write_probs_file

__all__ = [
    "EvalRow",
    "EvalReport",
    "IccComparison",
    "PipelineConfig",
    "RunResult",
    "split_items",
    "make_synthetic_items",
    "run_end_to_end",
    "export_icc_comparison",
    "read_icc_comparison",
    "write_truth_csv",
    "read_truth_csv",
    "write_item_bank_json",
    "read_item_bank_json",
    "evaluate_predictions",
    "write_report_json",
    "write_report_csv",
]

REGIMES = ("1PL-b", "2PL-a", "2PL-b")

_STREAM_ITEMS = 2
_STREAM_SPLITS = 3

# config keys a user may set per estimator; seeds and dev items are wired in
# by the pipeline itself
_SURROGATE_KEYS = {"learning_rate", "epochs", "patience", "dev_fraction", "clip_norm"}
_SMOOTHER_KEYS = {"tol", "max_iter", "restarts"}
_RECOVERY_KEYS = {"tol", "max_iter", "restarts", "init_a", "a_cap"}


def _filter_params(params: dict, allowed: set) -> dict:
    return {k: v for k, v in params.items() if k in allowed}


@dataclass(frozen=True)
class EvalRow:
    regime: str
    pearson: float
    rmse: float
    n_items: int

    def __post_init__(self):
        if not -1.0 <= self.pearson <= 1.0:
            raise ValidationError("pearson must lie in [-1, 1]")
        if self.rmse < 0 or self.n_items <= 0:
            raise ValidationError("rmse must be >= 0 and n_items > 0")


@dataclass(frozen=True)
class EvalReport:
    split: str
    rows: tuple[EvalRow, ...]
    notices: tuple[str, ...] = ()


@dataclass(frozen=True)
class IccComparison:
    """The three discrete curves of one item: observed, smoothed, model.

    NaN marks absent values (e.g. labels with no observed responses).
    """

    item_id: str
    theta_bar: np.ndarray
    observed: np.ndarray
    smoothed: np.ndarray
    model: np.ndarray

    def __post_init__(self):
        for name in ("theta_bar", "observed", "smoothed", "model"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.theta_bar.size
        if not (self.observed.size == self.smoothed.size == self.model.size == n):
            raise ValidationError("comparison columns must have equal length")
        for name in ("observed", "smoothed", "model"):
            arr = getattr(self, name)
            finite = arr[np.isfinite(arr)]
            if np.any(finite < -1e-12) or np.any(finite > 1 + 1e-12):
                raise ValidationError(f"{name} probabilities must lie in [0, 1]")


@contextmanager
def _stage(name: str):
    try:
        yield
    except ItemsimError as exc:
        if isinstance(exc, PipelineStageError):
            raise
        raise PipelineStageError(name, exc) from exc


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULT_FRACTIONS = {"train": 0.2, "dev": 0.2, "test": 0.6}


@dataclass
class PipelineConfig:
    seed: int = 0
    prior: PopulationPrior = field(default_factory=lambda: PopulationPrior(0.13, 1.15))
    scale_file: str | None = None
    n_students: int = 10000
    item_source: str = "synthetic"
    n_items: int = 20
    n_options: int = 4
    a_range: tuple[float, float] = (0.7, 2.0)
    b_range: tuple[float, float] = (-2.0, 2.0)
    probs_file: str | None = None
    truth_file: str | None = None
    fractions: dict = field(default_factory=lambda: dict(_DEFAULT_FRACTIONS))
    dev_items_file: str | None = None
    test_items_file: str | None = None
    surrogate: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    write_responses: bool = False

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        base = Path(base_dir) if base_dir is not None else Path(".")

        def resolve(p):
            return None if p is None else str((base / p).resolve()) if not Path(p).is_absolute() else str(p)

        cfg = cls()
        cfg.seed = int(doc.get("seed", 0))
        prior = doc.get("prior", {})
        cfg.prior = PopulationPrior(prior.get("mu", 0.13), prior.get("sigma", 1.15))
        cfg.scale_file = resolve(doc.get("scale_file"))
        cfg.n_students = int(doc.get("students", {}).get("n", 10000))
        items = doc.get("items", {})
        cfg.item_source = items.get("source", "synthetic")
        if cfg.item_source not in ("synthetic", "probs"):
            raise ValidationError(f"items.source must be 'synthetic' or 'probs', got {cfg.item_source!r}")
        cfg.n_items = int(items.get("n_items", 20))
        cfg.n_options = int(items.get("n_options", 4))
        cfg.a_range = tuple(items.get("a_range", (0.7, 2.0)))
        cfg.b_range = tuple(items.get("b_range", (-2.0, 2.0)))
        cfg.probs_file = resolve(items.get("probs_file"))
        cfg.truth_file = resolve(items.get("truth_file"))
        split = doc.get("split", {})
        cfg.fractions = dict(split.get("fractions", _DEFAULT_FRACTIONS))
        cfg.dev_items_file = resolve(split.get("dev_items_file"))
        cfg.test_items_file = resolve(split.get("test_items_file"))
        cfg.surrogate = dict(doc.get("surrogate", {}))
        unknown = set(cfg.surrogate) - _SURROGATE_KEYS
        if unknown:
            raise ValidationError(f"unknown surrogate options: {sorted(unknown)}")
        cfg.calibration = dict(doc.get("calibration", {}))
        unknown = set(cfg.calibration) - (_SMOOTHER_KEYS | _RECOVERY_KEYS)
        if unknown:
            raise ValidationError(f"unknown calibration options: {sorted(unknown)}")
        cfg.write_responses = bool(doc.get("write_responses", False))
        if cfg.item_source == "probs" and (cfg.probs_file is None or cfg.truth_file is None):
            raise ValidationError("items.source 'probs' requires probs_file and truth_file")
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=Path(path).resolve().parent)

    def build_scale(self) -> AbilityScale:
        if self.scale_file is not None:
            return load_scale(self.scale_file)
        return default_scale(self.prior)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "prior": {"mu": self.prior.mu, "sigma": self.prior.sigma},
            "scale_file": self.scale_file,
            "students": {"n": self.n_students},
            "items": {
                "source": self.item_source,
                "n_items": self.n_items,
                "n_options": self.n_options,
                "a_range": list(self.a_range),
                "b_range": list(self.b_range),
                "probs_file": self.probs_file,
                "truth_file": self.truth_file,
            },
            "split": {
                "fractions": self.fractions,
                "dev_items_file": self.dev_items_file,
                "test_items_file": self.test_items_file,
            },
            "surrogate": self.surrogate,
            "calibration": self.calibration,
            "write_responses": self.write_responses,
        }


# ---------------------------------------------------------------------------
# Items, truth, and splits
# ---------------------------------------------------------------------------

def make_synthetic_items(n_items: int, n_options: int, a_range, b_range, seed: int):
    """Ground-truth items with uniformly random dichotomous (a, b) and
    equally likely distractors; returns (nominal items, true ItemParams)."""
    if n_items < 1 or n_options < 2:
        raise ValidationError("need n_items >= 1 and n_options >= 2")
    lo_a, hi_a = float(a_range[0]), float(a_range[1])
    lo_b, hi_b = float(b_range[0]), float(b_range[1])
    if not (lo_a <= hi_a and lo_b <= hi_b) or lo_a <= 0:
        raise ValidationError("a_range must be positive and ranges ordered")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAM_ITEMS,)))
    a = rng.uniform(lo_a, hi_a, size=n_items)
    b = rng.uniform(lo_b, hi_b, size=n_items)
    items = []
    truth = []
    shift = np.log(n_options - 1)
    for j in range(n_items):
        # choose the nominal slope/location so the induced dichotomous curve
        # is exactly (a_j, b_j)
        items.append(NominalParams.from_item_params(a[j], b[j] - shift / a[j], n_options,
                                                    correct_index=0))
        truth.append(ItemParams(a[j], b[j]))
    return items, truth


def exact_icc(params: ItemParams, scale: AbilityScale) -> DiscreteICC:
    """The noise-free discrete ICC of a dichotomous item on `scale`."""
    return DiscreteICC(expit(params.a * (scale.theta_bar - params.b)), scale)


def one_pl_projection(params: ItemParams, scale: AbilityScale, **recovery_params) -> float:
    """Difficulty of the best 1PL fit to the item's exact discrete ICC."""
    rec = IccRecovery(model="1pl", **recovery_params)
    icc = exact_icc(params, scale)
    rec.fit(scale.theta_bar, icc.probs, sample_weight=scale.weights)
    return rec.b_


def split_items(n_items: int, fractions: dict, seed: int) -> dict[str, np.ndarray]:
    """Partition item indices into train/dev/test by seeded shuffle."""
    f = {k: float(fractions.get(k, 0.0)) for k in ("train", "dev", "test")}
    if any(v < 0 for v in f.values()) or abs(sum(f.values()) - 1.0) > 1e-9:
        raise ValidationError("split fractions must be non-negative and sum to 1")
    perm = np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(_STREAM_SPLITS,))
    ).permutation(n_items)
    n_train = int(round(f["train"] * n_items))
    n_dev = int(round(f["dev"] * n_items))
    if n_train + n_dev > n_items:
        n_dev = n_items - n_train
    split = {
        "train": np.sort(perm[:n_train]),
        "dev": np.sort(perm[n_train : n_train + n_dev]),
        "test": np.sort(perm[n_train + n_dev :]),
    }
    if split["dev"].size < 2 or split["test"].size < 2:
        raise ValidationError("dev and test splits each need at least 2 items")
    return split


def _read_id_list(path) -> list[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read item list {path}: {exc}") from exc
    ids = [line.strip() for line in lines if line.strip()]
    if not ids:
        raise ValidationError(f"item list {path} is empty")
    return ids


def split_from_files(item_ids: list[str], dev_file, test_file) -> dict[str, np.ndarray]:
    """Fixed splits from explicit item-id list files; leftovers become train."""
    index = {item_id: j for j, item_id in enumerate(item_ids)}
    chosen = {}
    for name, path in (("dev", dev_file), ("test", test_file)):
        ids = _read_id_list(path)
        unknown = [i for i in ids if i not in index]
        if unknown:
            raise ValidationError(f"{name} list references unknown items: {unknown[:5]}")
        chosen[name] = np.array(sorted(index[i] for i in ids), dtype=int)
    if np.intersect1d(chosen["dev"], chosen["test"]).size:
        raise ValidationError("dev and test lists overlap")
    used = np.union1d(chosen["dev"], chosen["test"])
    chosen["train"] = np.setdiff1d(np.arange(len(item_ids)), used)
    if chosen["dev"].size < 2 or chosen["test"].size < 2:
        raise ValidationError("dev and test splits each need at least 2 items")
    return chosen


def write_truth_csv(path, item_ids, truth_2pl, truth_1pl_b) -> None:
    """CSV item_id,a,b,b_1pl; a/b (or b_1pl) may be None and are left empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "a", "b", "b_1pl"])
        for j, item_id in enumerate(item_ids):
            p = truth_2pl[j]
            b1 = truth_1pl_b[j]
            writer.writerow([
                item_id,
                "" if p is None else repr(float(p.a)),
                "" if p is None else repr(float(p.b)),
                "" if b1 is None else repr(float(b1)),
            ])


def read_truth_csv(path):
    """Returns (item_ids, truth_2pl list[ItemParams|None], truth_1pl_b list[float|None])."""
    ids, t2, t1 = [], [], []
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                ids.append(row["item_id"])
                if row.get("a") and row.get("b"):
                    t2.append(ItemParams(float(row["a"]), float(row["b"])))
                else:
                    t2.append(None)
                t1.append(float(row["b_1pl"]) if row.get("b_1pl") else None)
    except (OSError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read truth file {path}: {exc}") from exc
    if not ids:
        raise ValidationError(f"truth file {path} is empty")
    return ids, t2, t1


def write_item_bank_json(path, items: list[NominalParams], item_ids, extras=None) -> None:
    """Persist nominal item lines: {"items": [{item_id, options, correct_index,
    lines: [[slope, intercept], ...], ...extras}]}."""
    doc = {"items": []}
    for j, (item, item_id) in enumerate(zip(items, item_ids)):
        entry = {
            "item_id": str(item_id),
            "options": item.n_options,
            "correct_index": item.correct_index,
            "lines": [[float(s), float(i)] for s, i in item.options],
        }
        if extras is not None:
            entry.update(extras[j])
        doc["items"].append(entry)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_item_bank_json(path):
    """Returns (items list[NominalParams], item_ids list[str])."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read item bank {path}: {exc}") from exc
    items, ids = [], []
    try:
        for entry in doc["items"]:
            lines = entry["lines"]
            items.append(NominalParams.from_lines(
                [line[0] for line in lines],
                [line[1] for line in lines],
                int(entry["correct_index"]),
            ))
            ids.append(str(entry["item_id"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed item bank {path}: {exc}") from exc
    if not items:
        raise ValidationError(f"item bank {path} is empty")
    return items, ids


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_predictions(preds: dict, truth: dict, split: dict):
    """Bias-correct predictions on the dev split and score dev/test.

    `preds` and `truth` map regime name -> full-length vector (truth entries
    may be None when unavailable).  Returns (reports, corrections): per-split
    EvalReports over the regimes present in both, and the fitted per-regime
    BiasCorrections.
    """
    dev_idx = np.asarray(split["dev"], dtype=int)
    test_idx = np.asarray(split["test"], dtype=int)
    corrections: dict[str, BiasCorrection] = {}
    rows: dict[str, list[EvalRow]] = {"dev": [], "test": []}
    notices: list[str] = []
    for regime in REGIMES:
        pred = preds.get(regime)
        true = truth.get(regime)
        if pred is None or true is None:
            notices.append(f"regime {regime} omitted: ground truth not available")
            continue
        pred = np.asarray(pred, dtype=float)
        true = np.asarray(true, dtype=float)
        correction = fit_bias_correction(pred[dev_idx], true[dev_idx])
        corrections[regime] = correction
        corrected = apply_bias_correction(correction, pred)
        for name, idx in (("dev", dev_idx), ("test", test_idx)):
            rows[name].append(EvalRow(
                regime=regime,
                pearson=pearson(corrected[idx], true[idx]),
                rmse=rmse(corrected[idx], true[idx]),
                n_items=idx.size,
            ))
    reports = {
        name: EvalReport(split=name, rows=tuple(rows[name]), notices=tuple(notices))
        for name in ("dev", "test")
    }
    return reports, corrections


def write_report_json(path, reports: dict, corrections: dict) -> None:
    doc = {
        "splits": {
            name: {
                "rows": [
                    {"regime": r.regime, "pearson": r.pearson, "rmse": r.rmse,
                     "n_items": r.n_items}
                    for r in reports[name].rows
                ],
                "notices": list(reports[name].notices),
            }
            for name in ("dev", "test")
        },
        "bias_correction": {
            regime: {"slope": c.slope, "intercept": c.intercept, "fitted_on": c.fitted_on}
            for regime, c in corrections.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_report_csv(path, reports: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "regime", "pearson", "rmse", "n_items"])
        for name in ("dev", "test"):
            for r in reports[name].rows:
                writer.writerow([name, r.regime, repr(r.pearson), repr(r.rmse), r.n_items])


def export_icc_comparison(comparison: IccComparison, path) -> None:
    """CSV theta_bar,observed,nrm,model; absent (NaN) cells are left empty."""

    def cell(v: float) -> str:
        return "" if not np.isfinite(v) else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_bar", "observed", "nrm", "model"])
        for k in range(comparison.theta_bar.size):
            writer.writerow([
                repr(float(comparison.theta_bar[k])),
                cell(comparison.observed[k]),
                cell(comparison.smoothed[k]),
                cell(comparison.model[k]),
            ])


def read_icc_comparison(path, item_id: str = "") -> IccComparison:
    cols = {"theta_bar": [], "observed": [], "nrm": [], "model": []}
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for key in cols:
                    value = row[key]
                    cols[key].append(float(value) if value != "" else np.nan)
    except (OSError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read ICC comparison {path}: {exc}") from exc
    return IccComparison(item_id, cols["theta_bar"], cols["observed"], cols["nrm"], cols["model"])


# ---------------------------------------------------------------------------
# End-to-end run
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    reports: dict
    corrections: dict
    split: dict
    item_ids: list[str]
    files: dict
    out_dir: str


def _resolve_split(config: PipelineConfig, item_ids: list[str], seed: int) -> dict:
    if config.dev_items_file or config.test_items_file:
        if not (config.dev_items_file and config.test_items_file):
            raise ValidationError("explicit splits need both dev_items_file and test_items_file")
        return split_from_files(item_ids, config.dev_items_file, config.test_items_file)
    return split_items(len(item_ids), config.fractions, seed)


def _recover_all(iccs: list[DiscreteICC], calibration: dict):
    """2PL and 1PL recoveries for every item's model ICC."""
    params = _filter_params(calibration, _RECOVERY_KEYS)
    rec2, rec1 = [], []
    for icc in iccs:
        rec2.append(IccRecovery(model="2pl", **params).fit(
            icc.scale.theta_bar, icc.probs, sample_weight=icc.scale.weights))
        rec1.append(IccRecovery(model="1pl", **params).fit(
            icc.scale.theta_bar, icc.probs, sample_weight=icc.scale.weights))
    return rec2, rec1


def run_end_to_end(config: PipelineConfig, out_dir, seed: int | None = None) -> RunResult:
    """Run the full pipeline under `config` into `out_dir`.

    Synthetic source: simulate -> bin -> smooth -> train surrogate -> recover.
    Probability-file source: validated per-option probabilities replace the
    simulated/surrogate stages and flow straight to recovery.  Deterministic:
    the same config and seed produce byte-identical outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "icc").mkdir(exist_ok=True)
    run_seed = config.seed if seed is None else int(seed)
    files: dict[str, str] = {}

    def path_of(name: str) -> Path:
        p = out / name
        files[name] = str(p)
        return p

    with _stage("scale"):
        scale = config.build_scale()

    synthetic = config.item_source == "synthetic"
    observed_iccs = smoothed_probs = None

    if synthetic:
        with _stage("items"):
            items, truth2 = make_synthetic_items(
                config.n_items, config.n_options, config.a_range, config.b_range, run_seed)
            item_ids = [str(j) for j in range(len(items))]
            truth1 = [one_pl_projection(p, scale) for p in truth2]
        with _stage("simulate"):
            pop = sample_population(config.n_students, scale.prior, run_seed)
            records = sample_responses(pop, items, run_seed)
            if config.write_responses:
                write_responses_csv(path_of("responses.csv"), records, pop)
        with _stage("bin"):
            counts = bin_responses(records, pop, scale)
            write_counts_json(path_of("counts.json"), counts, item_ids)
        with _stage("calibrate"):
            smoother_params = _filter_params(config.calibration, _SMOOTHER_KEYS)
            smoothers = []
            for j, item in enumerate(items):
                sm = NominalSmoother(correct_index=item.correct_index, **smoother_params)
                smoothers.append(sm.fit(counts.item_matrix(j), scale))
            observed_iccs = [empirical_icc(counts, j, items[j].correct_index)
                             for j in range(len(items))]
            smoothed_probs = [sm.per_label_probs_ for sm in smoothers]
            write_item_bank_json(
                path_of("nrm_params.json"),
                [sm.params_ for sm in smoothers],
                item_ids,
                extras=[{"objective": sm.objective_, "converged": sm.converged_}
                        for sm in smoothers],
            )
            write_probs_file(
                path_of("nrm_probs.json"),
                [ItemProbs(item_ids[j], items[j].n_options, items[j].correct_index,
                           smoothed_probs[j]) for j in range(len(items))],
                scale,
            )
        split = _resolve_split(config, item_ids, run_seed)
        with _stage("surrogate"):
            model = SurrogateStudentModel(dev_items=split["dev"],
                                          random_state=run_seed, **config.surrogate)
            model.fit(smoothed_probs, sample_weight=scale.weights)
            model_entries = [
                ItemProbs(item_ids[j], items[j].n_options, items[j].correct_index,
                          model.predict_proba(j))
                for j in range(len(items))
            ]
            write_probs_file(path_of("surrogate_probs.json"), model_entries, scale)
            hist = {"dev_loss": model.history_["dev_loss"],
                    "total_loss": model.history_["total_loss"],
                    "initial_loss": model.initial_loss_,
                    "final_loss": model.loss_,
                    "n_epochs": model.n_epochs_,
                    "dev_items": [int(i) for i in model.dev_items_]}
            path_of("surrogate_history.json").write_text(
                json.dumps(hist, indent=2) + "\n", encoding="utf-8")
        with _stage("truth"):
            write_truth_csv(path_of("truth.csv"), item_ids, truth2, truth1)
    else:
        with _stage("ingest"):
            model_entries = load_probs_file(config.probs_file, scale)
            item_ids = [e.item_id for e in model_entries]
            tids, truth2, truth1 = read_truth_csv(config.truth_file)
            if tids != item_ids:
                by_id = dict(zip(tids, zip(truth2, truth1)))
                missing = [i for i in item_ids if i not in by_id]
                if missing:
                    raise ValidationError(f"truth file missing items: {missing[:5]}")
                truth2 = [by_id[i][0] for i in item_ids]
                truth1 = [by_id[i][1] for i in item_ids]
        split = _resolve_split(config, item_ids, run_seed)

    with _stage("recover"):
        model_iccs = [entry.icc(scale) for entry in model_entries]
        rec2, rec1 = _recover_all(model_iccs, config.calibration)
        write_item_params_csv(
            path_of("recovered_2pl.csv"),
            [(item_ids[j], r.a_, r.b_, r.converged_, r.objective_, r.n_used_)
             for j, r in enumerate(rec2)],
        )
        write_item_params_csv(
            path_of("recovered_1pl.csv"),
            [(item_ids[j], r.a_, r.b_, r.converged_, r.objective_, r.n_used_)
             for j, r in enumerate(rec1)],
        )

    with _stage("evaluate"):
        preds = {
            "1PL-b": np.array([r.b_ for r in rec1]),
            "2PL-a": np.array([r.a_ for r in rec2]),
            "2PL-b": np.array([r.b_ for r in rec2]),
        }
        truth_vectors = {
            "1PL-b": (np.array([float(v) for v in truth1])
                      if all(v is not None for v in truth1) else None),
            "2PL-a": (np.array([p.a for p in truth2])
                      if all(p is not None for p in truth2) else None),
            "2PL-b": (np.array([p.b for p in truth2])
                      if all(p is not None for p in truth2) else None),
        }
        reports, corrections = evaluate_predictions(preds, truth_vectors, split)
        write_report_json(path_of("report.json"), reports, corrections)
        write_report_csv(path_of("report.csv"), reports)

    with _stage("export"):
        nan_col = np.full(len(scale), np.nan)
        for j, item_id in enumerate(item_ids):
            comparison = IccComparison(
                item_id=item_id,
                theta_bar=scale.theta_bar,
                observed=observed_iccs[j].probs if observed_iccs is not None else nan_col,
                smoothed=(smoothed_probs[j][:, model_entries[j].correct_index]
                          if smoothed_probs is not None else nan_col),
                model=model_iccs[j].probs,
            )
            export_icc_comparison(comparison, path_of(f"icc/icc_{item_id}.csv"))
        resolved = config.to_dict()
        resolved["seed"] = run_seed
        path_of("run_config.json").write_text(
            json.dumps(resolved, indent=2) + "\n", encoding="utf-8")

    return RunResult(
        reports=reports,
        corrections=corrections,
        split={k: v.tolist() for k, v in split.items()},
        item_ids=item_ids,
        files=files,
        out_dir=str(out),
    )
