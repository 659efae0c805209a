"""Command-line interface.

Every subcommand takes --config (JSON), --seed (overrides the config seed) and
--out (output directory).  Exit codes: 0 success, 2 validation error, 3
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibrate import (
    IccRecovery,
    NominalSmoother,
    TwoPLCalibrator,
    read_item_params_csv,
    write_item_params_csv,
)
from .exceptions import NumericalError, PipelineStageError, ValidationError
from .pipeline import (
    IccComparison,
    PipelineConfig,
    _filter_params,
    _RECOVERY_KEYS,
    _SMOOTHER_KEYS,
    _resolve_split,
    evaluate_predictions,
    export_icc_comparison,
    make_synthetic_items,
    one_pl_projection,
    read_icc_comparison,
    read_item_bank_json,
    read_truth_csv,
    run_end_to_end,
    write_item_bank_json,
    write_report_csv,
    write_report_json,
    write_truth_csv,
)
from .simulate import (
    bin_responses,
    empirical_icc,
    item_response_arrays,
    read_counts_json,
    read_responses_csv,
    sample_population,
    sample_responses,
    write_counts_json,
    write_responses_csv,
)
from .surrogate import ItemProbs, SurrogateStudentModel, load_probs_file, write_probs_file

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory (default: out)")


def _load(args) -> tuple[PipelineConfig, int, Path]:
    config = PipelineConfig.from_file(args.config)
    seed = config.seed if args.seed is None else int(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return config, seed, out


def _cmd_simulate(args) -> int:
    config, seed, out = _load(args)
    scale = config.build_scale()
    items, truth2 = make_synthetic_items(
        config.n_items, config.n_options, config.a_range, config.b_range, seed)
    item_ids = [str(j) for j in range(len(items))]
    truth1 = [one_pl_projection(p, scale) for p in truth2]
    pop = sample_population(config.n_students, scale.prior, seed)
    records = sample_responses(pop, items, seed)
    counts = bin_responses(records, pop, scale)
    write_responses_csv(out / "responses.csv", records, pop)
    write_counts_json(out / "counts.json", counts, item_ids)
    write_item_bank_json(out / "items.json", items, item_ids)
    write_truth_csv(out / "truth.csv", item_ids, truth2, truth1)
    print(f"simulated {len(records)} responses from {pop.n_students} students "
          f"to {len(items)} items -> {out}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    config, _, out = _load(args)
    items, item_ids = read_item_bank_json(args.items)
    records, pop = read_responses_csv(args.responses, items)
    params = _filter_params(config.calibration, _RECOVERY_KEYS | {"init_b"})
    rows = []
    for j, item_id in enumerate(item_ids):
        theta, y = item_response_arrays(records, pop, j)
        cal = TwoPLCalibrator(**params).fit(theta, y)
        rows.append((item_id, cal.a_, cal.b_, cal.converged_, cal.objective_, cal.n_used_))
    write_item_params_csv(out / "params_direct_2pl.csv", rows)
    print(f"calibrated {len(rows)} items -> {out / 'params_direct_2pl.csv'}")
    return EXIT_OK


def _cmd_fit_nrm(args) -> int:
    config, _, out = _load(args)
    scale = config.build_scale()
    counts, item_ids = read_counts_json(args.counts, scale)
    items, bank_ids = read_item_bank_json(args.items)
    if bank_ids != item_ids:
        raise ValidationError("items.json and counts.json disagree on item ids")
    params = _filter_params(config.calibration, _SMOOTHER_KEYS)
    fits = []
    for j, item in enumerate(items):
        sm = NominalSmoother(correct_index=item.correct_index, **params)
        fits.append(sm.fit(counts.item_matrix(j), scale))
    write_item_bank_json(
        out / "nrm_params.json",
        [sm.params_ for sm in fits],
        item_ids,
        extras=[{"objective": sm.objective_, "converged": sm.converged_} for sm in fits],
    )
    write_probs_file(
        out / "nrm_probs.json",
        [ItemProbs(item_ids[j], items[j].n_options, items[j].correct_index,
                   fits[j].per_label_probs_) for j in range(len(items))],
        scale,
    )
    print(f"fitted nominal models for {len(fits)} items -> {out}")
    return EXIT_OK


def _cmd_train_surrogate(args) -> int:
    config, seed, out = _load(args)
    scale = config.build_scale()
    entries = load_probs_file(args.targets, scale)
    targets = []
    for e in entries:
        if not np.all(np.isfinite(e.probs)):
            raise ValidationError(
                f"item {e.item_id!r}: training targets must cover every label")
        targets.append(e.probs)
    model = SurrogateStudentModel(random_state=seed, **config.surrogate)
    model.fit(targets, sample_weight=scale.weights)
    write_probs_file(
        out / "surrogate_probs.json",
        [ItemProbs(e.item_id, e.n_options, e.correct_index, model.predict_proba(j))
         for j, e in enumerate(entries)],
        scale,
    )
    hist = {"dev_loss": model.history_["dev_loss"],
            "total_loss": model.history_["total_loss"],
            "initial_loss": model.initial_loss_,
            "final_loss": model.loss_,
            "n_epochs": model.n_epochs_,
            "dev_items": [int(i) for i in model.dev_items_]}
    (out / "surrogate_history.json").write_text(json.dumps(hist, indent=2) + "\n",
                                                encoding="utf-8")
    print(f"trained surrogate for {len(entries)} items in {model.n_epochs_} epochs "
          f"(loss {model.loss_:.3e}) -> {out}")
    return EXIT_OK


def _cmd_ingest_probs(args) -> int:
    config, _, out = _load(args)
    scale = config.build_scale()
    entries = load_probs_file(args.probs, scale)
    write_probs_file(out / "ingested_probs.json", entries, scale)
    print(f"validated {len(entries)} items -> {out / 'ingested_probs.json'}")
    return EXIT_OK


def _cmd_recover(args) -> int:
    config, _, out = _load(args)
    scale = config.build_scale()
    entries = load_probs_file(args.probs, scale)
    params = _filter_params(config.calibration, _RECOVERY_KEYS)
    rows2, rows1 = [], []
    for entry in entries:
        icc = entry.icc(scale)
        r2 = IccRecovery(model="2pl", **params).fit(
            scale.theta_bar, icc.probs, sample_weight=scale.weights)
        r1 = IccRecovery(model="1pl", **params).fit(
            scale.theta_bar, icc.probs, sample_weight=scale.weights)
        rows2.append((entry.item_id, r2.a_, r2.b_, r2.converged_, r2.objective_, r2.n_used_))
        rows1.append((entry.item_id, r1.a_, r1.b_, r1.converged_, r1.objective_, r1.n_used_))
    write_item_params_csv(out / "recovered_2pl.csv", rows2)
    write_item_params_csv(out / "recovered_1pl.csv", rows1)
    print(f"recovered parameters for {len(entries)} items -> {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config, seed, out = _load(args)
    item_ids, truth2, truth1 = read_truth_csv(args.truth)
    pred2 = {r["item_id"]: r for r in read_item_params_csv(args.pred_2pl)}
    pred1 = {r["item_id"]: r for r in read_item_params_csv(args.pred_1pl)}
    missing = [i for i in item_ids if i not in pred2 or i not in pred1]
    if missing:
        raise ValidationError(f"predictions missing items: {missing[:5]}")
    split = _resolve_split(config, item_ids, seed)
    preds = {
        "1PL-b": np.array([pred1[i]["b"] for i in item_ids]),
        "2PL-a": np.array([pred2[i]["a"] for i in item_ids]),
        "2PL-b": np.array([pred2[i]["b"] for i in item_ids]),
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
    write_report_json(out / "report.json", reports, corrections)
    write_report_csv(out / "report.csv", reports)
    for name in ("dev", "test"):
        for row in reports[name].rows:
            print(f"{name:4s} {row.regime:6s} pearson={row.pearson:+.4f} "
                  f"rmse={row.rmse:.4f} n={row.n_items}")
        for notice in reports[name].notices:
            print(f"{name:4s} NOTE {notice}")
    return EXIT_OK


def _cmd_export_icc(args) -> int:
    config, _, out = _load(args)
    scale = config.build_scale()
    counts, item_ids = read_counts_json(args.counts, scale)
    nrm_entries = {e.item_id: e for e in load_probs_file(args.nrm, scale)}
    model_entries = {e.item_id: e for e in load_probs_file(args.model, scale)}
    icc_dir = out / "icc"
    icc_dir.mkdir(parents=True, exist_ok=True)
    for j, item_id in enumerate(item_ids):
        if item_id not in nrm_entries or item_id not in model_entries:
            raise ValidationError(f"item {item_id!r} missing from nrm/model probability files")
        nrm = nrm_entries[item_id]
        observed = empirical_icc(counts, j, nrm.correct_index)
        comparison = IccComparison(
            item_id=item_id,
            theta_bar=scale.theta_bar,
            observed=observed.probs,
            smoothed=nrm.icc(scale).probs,
            model=model_entries[item_id].icc(scale).probs,
        )
        export_icc_comparison(comparison, icc_dir / f"icc_{item_id}.csv")
    print(f"exported {len(item_ids)} ICC comparisons -> {icc_dir}")
    return EXIT_OK


def _cmd_run_all(args) -> int:
    config, seed, out = _load(args)
    result = run_end_to_end(config, out, seed=seed)
    for name in ("dev", "test"):
        for row in result.reports[name].rows:
            print(f"{name:4s} {row.regime:6s} pearson={row.pearson:+.4f} "
                  f"rmse={row.rmse:.4f} n={row.n_items}")
        for notice in result.reports[name].notices:
            print(f"{name:4s} NOTE {notice}")
    print(f"wrote {len(result.files)} files -> {out}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    comparison = read_icc_comparison(args.icc)
    lines = ["# theta_bar observed nrm model"]
    for k in range(comparison.theta_bar.size):
        def cell(v):
            return "nan" if not np.isfinite(v) else repr(float(v))
        lines.append(" ".join([
            repr(float(comparison.theta_bar[k])),
            cell(comparison.observed[k]),
            cell(comparison.smoothed[k]),
            cell(comparison.model[k]),
        ]))
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itemsim",
        description="Simulation-based calibration of multiple-choice item parameters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a population and its responses")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="direct 2PL calibration from raw responses")
    _add_common(p)
    p.add_argument("--responses", required=True, help="responses CSV")
    p.add_argument("--items", required=True, help="item bank JSON")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("fit-nrm", help="fit nominal models to binned counts")
    _add_common(p)
    p.add_argument("--counts", required=True, help="counts JSON")
    p.add_argument("--items", required=True, help="item bank JSON")
    p.set_defaults(func=_cmd_fit_nrm)

    p = sub.add_parser("train-surrogate", help="train the surrogate student model")
    _add_common(p)
    p.add_argument("--targets", required=True, help="target probabilities JSON")
    p.set_defaults(func=_cmd_train_surrogate)

    p = sub.add_parser("ingest-probs", help="validate an external probabilities file")
    _add_common(p)
    p.add_argument("--probs", required=True, help="probabilities JSON to validate")
    p.set_defaults(func=_cmd_ingest_probs)

    p = sub.add_parser("recover", help="recover (a, b) from model probabilities")
    _add_common(p)
    p.add_argument("--probs", required=True, help="model probabilities JSON")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("evaluate", help="bias-correct and score predictions")
    _add_common(p)
    p.add_argument("--truth", required=True, help="truth CSV")
    p.add_argument("--pred-2pl", required=True, help="recovered 2PL params CSV")
    p.add_argument("--pred-1pl", required=True, help="recovered 1PL params CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-icc", help="write per-item ICC comparison CSVs")
    _add_common(p)
    p.add_argument("--counts", required=True, help="counts JSON")
    p.add_argument("--nrm", required=True, help="smoothed probabilities JSON")
    p.add_argument("--model", required=True, help="model probabilities JSON")
    p.set_defaults(func=_cmd_export_icc)

    p = sub.add_parser("run-all", help="run the whole pipeline")
    _add_common(p)
    p.set_defaults(func=_cmd_run_all)

    p = sub.add_parser("plot", help="emit gnuplot-ready data for one ICC comparison")
    p.add_argument("--icc", required=True, help="ICC comparison CSV")
    p.add_argument("--output", default=None, help="write here instead of stdout")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineStageError as exc:
        cause = exc.__cause__
        code = EXIT_VALIDATION if isinstance(cause, ValidationError) else EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
