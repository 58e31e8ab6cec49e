"""Command-line interface.

Verbs: evaluate, train, sweep, bench, report, synth, check.
Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.
BENCH_JOBS sets the default for --jobs.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import BenchConfig, load_config
from .embedcore import EmbeddingSet, knn, l2_normalize
from .embfiles import read_embeddings, write_embeddings
from .errors import MetricBenchError, ParseError, ValidationError
from .losses import gradient_check, loss_ids, sample_non_kink_batch
from .metrics import compute_report
from .model import save_checkpoint
from .protocol import (
    derive_seed,
    evaluate_ensemble,
    plan_from_labels,
    run_cross_validation,
)
from .report import REPORT_FORMATS, BenchmarkReport, emit_report, run_benchmark
from .search import HyperparamSpace, hyperparameter_search
from .synth import synth_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="metricbench",
                     description="Benchmark harness for deep metric learning losses")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML config path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int,
                       default=int(os.environ.get("BENCH_JOBS", "0")) or None,
                       help="parallel fold workers (default: config, env BENCH_JOBS)")

    p = sub.add_parser("evaluate", help="metrics on an embedding file")
    p.add_argument("--input", required=True, help="CSV or EMB1 embedding file")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--clusters", action="store_true",
                   help="also run k-means and report NMI/AMI/F1")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip L2 normalization before scoring")
    p.add_argument("--out", help="also write the report JSON here")

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--emb-format", choices=("csv", "emb1"), default="csv")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="cross-validate one fixed-parameter config")
    common(p)

    p = sub.add_parser("sweep", help="hyperparameter search for one loss")
    common(p)

    p = sub.add_parser("bench", help="full multi-loss benchmark report")
    common(p)
    p.add_argument("--format", default="json,csv,markdown,plotdata",
                   help="comma-separated subset of json,csv,markdown,plotdata")

    p = sub.add_parser("report", help="re-emit report files from report.json")
    p.add_argument("--input", required=True, help="existing report.json")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="json,csv,markdown,plotdata")

    p = sub.add_parser("check", help="gradient and invariant self-test suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_overrides(cfg: BenchConfig, args) -> BenchConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _parse_formats(spec: str) -> list[str]:
    formats = [f.strip() for f in spec.split(",") if f.strip()]
    for f in formats:
        if f not in REPORT_FORMATS:
            raise ValidationError(f"unknown report format {f!r}")
    return formats


def _cmd_evaluate(args) -> int:
    embeddings, labels = read_embeddings(args.input)
    if not args.no_normalize:
        embeddings = l2_normalize(embeddings)
    report = compute_report(embeddings, labels, metric=args.metric,
                            clustering=args.clusters)
    text = json.dumps(report.to_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def _cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if cfg.synthetic is None:
        raise ValidationError("synth needs a dataset.synthetic section")
    spec = cfg.synthetic
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    data = synth_dataset(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(out, EmbeddingSet(data.inputs), data.labels, fmt=args.emb_format)
    print(f"wrote {data.n} samples, {data.labels.num_classes} classes, "
          f"dim {data.dim} to {out}")
    return EXIT_OK


def _prepare_run_dir(cfg: BenchConfig, args) -> Path:
    if not cfg.out_dir:
        raise ValidationError("an output directory is required (--out or out_dir)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.config, out / "config.toml")
    return out


def _cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if len(cfg.loss_specs) != 1:
        raise ValidationError("train expects a single [loss] table")
    out = _prepare_run_dir(cfg, args)
    spec = cfg.loss_specs[0]
    data = cfg.load_dataset()
    plan = plan_from_labels(data.labels)
    train_cfg = cfg.train_config(spec)
    cv = run_cross_validation(data, plan, train_cfg, jobs=cfg.jobs)
    for i, result in enumerate(cv.fold_results):
        fold_dir = out / "folds" / str(i)
        fold_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(fold_dir / "checkpoint", result.model,
                        config_hash=cfg.config_hash(),
                        validation_series=result.series)
    test = data.restrict_classes(plan.test_classes)
    concat, sep = evaluate_ensemble(cv.checkpoints, test)
    final = {
        "loss_id": spec.loss_id,
        "config_hash": cfg.config_hash(),
        "fold_validation_scores": cv.fold_scores,
        "mean_validation_score": cv.mean_score,
        "validation_series_stability": _series_stability(cv.fold_results),
        "test": {"concatenated": concat.to_dict(), "separated": sep.to_dict()},
    }
    (out / "final.json").write_text(json.dumps(final, indent=2, sort_keys=True))
    print(json.dumps(final["test"], indent=2, sort_keys=True))
    return EXIT_OK


def _series_stability(fold_results) -> dict:
    """Per-metric lag-one autocorrelation of the validation series, one value
    per fold; null where a series is too short or constant."""
    from .errors import DegenerateSeries
    from .metrics import lag_one_autocorrelation

    out: dict = {}
    for metric in ("p_at_1", "map_at_r"):
        values = []
        for result in fold_results:
            series = result.series_by_metric.get(metric, [])
            try:
                values.append(lag_one_autocorrelation(series))
            except DegenerateSeries:
                values.append(None)
        out[metric] = values
    return out


def _cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if len(cfg.loss_specs) != 1:
        raise ValidationError("sweep expects a single [loss] table")
    spec = cfg.loss_specs[0]
    if not spec.space:
        raise ValidationError("sweep needs a loss.space table")
    out = _prepare_run_dir(cfg, args)
    data = cfg.load_dataset()
    plan = plan_from_labels(data.labels)
    base_cfg = cfg.train_config(spec)
    with (out / "trials.jsonl").open("w") as fh:
        def on_trial(rec):
            fh.write(json.dumps(rec.to_dict()) + "\n")
            print(f"trial {rec.index}: mean validation {rec.mean_score:.4f} {rec.params}")
        result = hyperparameter_search(
            HyperparamSpace.from_dict(spec.space), cfg.budget, cfg.strategy,
            base_cfg, data, plan, seed=derive_seed(cfg.seed, 31337, 0),
            jobs=cfg.jobs, on_trial=on_trial)
    best = {
        "loss_id": spec.loss_id,
        "config_hash": cfg.config_hash(),
        "best_params": result.best.params,
        "best_mean_validation": result.best.mean_score,
        "n_trials": len(result.trials),
    }
    (out / "best.json").write_text(json.dumps(best, indent=2, sort_keys=True))
    print(json.dumps(best, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    formats = _parse_formats(args.format)
    out = _prepare_run_dir(cfg, args)
    report = run_benchmark(cfg, out_dir=None,
                           progress=lambda msg: print(msg, file=sys.stderr))
    for spec_idx, row in enumerate(report.rows):
        if "error" in row:
            print(f"row {row['loss_id']} FAILED: {row['error']}", file=sys.stderr)
    emit_report(report, out, formats)
    print(f"report written to {out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        payload = json.loads(Path(args.input).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read {args.input}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{args.input}: {exc}") from exc
    report = BenchmarkReport.from_dict(payload)
    written = emit_report(report, args.out, _parse_formats(args.format))
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    for loss_id in loss_ids():
        tol = 1e-3 if loss_id == "fastap" else 1e-4
        worst = 0.0
        for _ in range(3):
            batch = sample_non_kink_batch(loss_id, rng)
            worst = max(worst, gradient_check(loss_id, batch))
        ok = worst < tol
        failures += 0 if ok else 1
        print(f"gradient {loss_id:<20} {'PASS' if ok else 'FAIL'} "
              f"(worst relative error {worst:.2e}, tolerance {tol:.0e})")
    # retrieval spot check: hypothetical 10-result rankings
    expected = {"only first": 0.10, "first and last": 0.12,
                "first two": 0.20, "all ten": 1.00}
    got = hypothetical_query_scores()
    for name, want in expected.items():
        ok = abs(got[name][2] - want) < 1e-12 and got[name][0] == 1.0
        failures += 0 if ok else 1
        print(f"map@r {name:<20} {'PASS' if ok else 'FAIL'} "
              f"({got[name][2]:.4f} vs {want})")
    print("self-test", "PASS" if failures == 0 else f"FAIL ({failures})")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def hypothetical_query_scores() -> dict:
    """(P@1, RP, MAP@R) of query 0 in the four hypothetical retrieval setups."""
    from .metrics import per_query_scores

    out = {}
    for name, correct_ranks in (("only first", {1}), ("first and last", {1, 10}),
                                ("first two", {1, 2}), ("all ten", set(range(1, 11)))):
        emb, labels = hypothetical_instance(correct_ranks)
        ranking = knn(emb, emb, k=emb.n - 1, exclude_self=True)
        scores = per_query_scores(ranking, labels)
        q0 = int(np.flatnonzero(scores.query_index == 0)[0])
        out[name] = (float(scores.p_at_1[q0]), float(scores.r_precision[q0]),
                     float(scores.map_at_r[q0]))
    return out


def hypothetical_instance(correct_ranks: set, total_r: int = 10):
    """Query at the origin plus references on a line; the references at the
    given ranks share the query's class, and exactly ``total_r`` same-class
    references exist in total (so query 0 has R = total_r)."""
    from .embedcore import LabelSet

    n_visible = max(3 * total_r, max(correct_ranks) + 5)
    positions = [0.0] + [float(i) for i in range(1, n_visible + 1)]
    labels = [0] + [0 if r in correct_ranks else r + 100
                    for r in range(1, n_visible + 1)]
    have = sum(1 for l in labels[1:] if l == 0)
    far = n_visible + 10.0
    while have < total_r:
        positions.append(far)
        labels.append(0)
        far += 1.0
        have += 1
    emb = EmbeddingSet(np.asarray(positions).reshape(-1, 1))
    return emb, LabelSet(np.asarray(labels))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "evaluate": _cmd_evaluate,
        "synth": _cmd_synth,
        "train": _cmd_train,
        "sweep": _cmd_sweep,
        "bench": _cmd_bench,
        "report": _cmd_report,
        "check": _cmd_check,
    }
    try:
        return handlers[args.verb](args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MetricBenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
