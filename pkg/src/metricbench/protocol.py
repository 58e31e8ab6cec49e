"""Evaluation protocol: deterministic class-disjoint splits, 4-fold
cross-validation, concatenated/separated ensemble evaluation, and multi-run
aggregation with confidence intervals.

Split rule: classes are ordered by canonical id; the first half is used for
cross-validation and the second half is the held-out test set. The four CV
partitions are contiguous quarters of the first half, and fold i validates
on partition i while training on the other three.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import LabeledData
from .embedcore import EmbeddingSet, LabelSet, l2_normalize
from .errors import DimMismatch, DisjointnessViolation, TooFewClasses
from .metrics import MetricReport, compute_report
from .model import MlpEmbedder, TrainConfig, TrainResult, embed, fit_until_plateau

N_FOLDS = 4
METRIC_FIELDS = ("p_at_1", "r_precision", "map_at_r")


def derive_seed(*parts) -> int:
    """Deterministic child seed from a tuple of integer parts."""
    entropy = [int(p) & 0xFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass(frozen=True)
class FoldPlan:
    test_classes: tuple[int, ...]
    partitions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = [c for part in self.partitions for c in part]
        if len(set(flat)) != len(flat):
            raise DisjointnessViolation("fold partitions overlap")
        if set(flat) & set(self.test_classes):
            raise DisjointnessViolation("test classes overlap a CV partition")

    @property
    def cv_classes(self) -> tuple[int, ...]:
        return tuple(sorted(c for part in self.partitions for c in part))

    @property
    def n_folds(self) -> int:
        return len(self.partitions)

    def fold(self, i: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(train_classes, val_classes) for fold i: validate on partition i."""
        val = self.partitions[i]
        train = tuple(sorted(
            c for j, part in enumerate(self.partitions) if j != i for c in part))
        return train, val


def class_split(labels: LabelSet) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """First half of classes (by canonical order) for CV, the rest for test."""
    classes = labels.classes
    if classes.size < 2 * N_FOLDS:
        raise TooFewClasses(f"need >= {2 * N_FOLDS} classes, got {classes.size}")
    n_cv = int(np.ceil(classes.size / 2))
    return tuple(classes[:n_cv].tolist()), tuple(classes[n_cv:].tolist())


def make_folds(cv_classes, test_classes=()) -> FoldPlan:
    """Contiguous quarters of the (sorted) CV classes, sizes differing by <= 1."""
    cv = sorted(int(c) for c in cv_classes)
    if len(cv) < N_FOLDS:
        raise TooFewClasses(f"need >= {N_FOLDS} CV classes, got {len(cv)}")
    parts = np.array_split(np.asarray(cv), N_FOLDS)
    return FoldPlan(tuple(int(c) for c in test_classes),
                    tuple(tuple(p.tolist()) for p in parts))


def plan_from_labels(labels: LabelSet) -> FoldPlan:
    cv, test = class_split(labels)
    return make_folds(cv, test)


@dataclass
class CrossValResult:
    fold_results: list[TrainResult]
    fold_scores: list[float]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.fold_scores))

    @property
    def checkpoints(self) -> list[MlpEmbedder]:
        return [r.model for r in self.fold_results]


def _run_fold(args) -> TrainResult:
    data, plan, cfg, fold_index = args
    train_classes, val_classes = plan.fold(fold_index)
    train = data.restrict_classes(train_classes)
    val = data.restrict_classes(val_classes)
    try:
        return fit_until_plateau(train, val, cfg)
    except Exception as exc:
        raise type(exc)(f"fold {fold_index}: {exc}") from exc


def run_cross_validation(data: LabeledData, plan: FoldPlan, cfg: TrainConfig,
                         jobs: int = 1) -> CrossValResult:
    """Train one model per fold on class-disjoint train/val subsets."""
    present = set(data.labels.classes.tolist())
    needed = set(plan.cv_classes)
    if not needed <= present:
        raise TooFewClasses(f"dataset is missing fold classes {sorted(needed - present)[:5]}")
    tasks = []
    for i in range(plan.n_folds):
        fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, i))
        tasks.append((data, plan, fold_cfg, i))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    return CrossValResult(results, [r.best_score for r in results])


def _mean_reports(reports: list[MetricReport]) -> MetricReport:
    def avg(name):
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    return MetricReport(
        p_at_1=avg("p_at_1"),
        r_precision=avg("r_precision"),
        map_at_r=avg("map_at_r"),
        nmi=avg("nmi"),
        ami=avg("ami"),
        f1=avg("f1"),
        n_queries_evaluated=reports[0].n_queries_evaluated,
        n_queries_skipped=reports[0].n_queries_skipped,
    )


def evaluate_ensemble(checkpoints: list[MlpEmbedder], test: LabeledData,
                      metric: str = "euclidean") -> tuple[MetricReport, MetricReport]:
    """Concatenated and separated test reports for the fold checkpoints.

    Concatenated: per-sample embeddings of all models joined and
    re-L2-normalized, then scored once. Separated: each model scored on its
    own and the reports averaged field-wise.
    """
    if not checkpoints:
        raise DimMismatch("need at least one checkpoint")
    dims = {m.d_embed for m in checkpoints}
    if len(dims) != 1:
        raise DimMismatch(f"checkpoints have differing embed dims {sorted(dims)}")
    blocks = [embed(m, test.inputs).data for m in checkpoints]
    concat = l2_normalize(EmbeddingSet(np.hstack(blocks)))
    concat_report = compute_report(concat, test.labels, metric=metric)
    per_model = [compute_report(EmbeddingSet(b), test.labels, metric=metric)
                 for b in blocks]
    return concat_report, _mean_reports(per_model)


def confidence_half_width(values) -> float:
    """95% CI half-width: 1.96 * sample std (n-1) / sqrt(n)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("confidence interval needs at least 2 runs")
    return float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


@dataclass
class FinalResult:
    """Aggregate of n training runs at fixed hyperparameters."""

    per_run_concatenated: list[MetricReport]
    per_run_separated: list[MetricReport]
    means: dict = field(default_factory=dict)
    half_widths: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.per_run_concatenated)

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "per_run": {
                "concatenated": [r.to_dict() for r in self.per_run_concatenated],
                "separated": [r.to_dict() for r in self.per_run_separated],
            },
            "means": self.means,
            "half_widths": self.half_widths,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinalResult":
        return cls(
            [MetricReport.from_dict(r) for r in d["per_run"]["concatenated"]],
            [MetricReport.from_dict(r) for r in d["per_run"]["separated"]],
            d["means"],
            d["half_widths"],
        )


def aggregate_runs(concatenated: list[MetricReport],
                   separated: list[MetricReport]) -> FinalResult:
    means: dict = {}
    half_widths: dict = {}
    for setting, reports in (("concatenated", concatenated), ("separated", separated)):
        means[setting] = {}
        half_widths[setting] = {}
        for name in METRIC_FIELDS:
            vals = [getattr(r, name) for r in reports]
            means[setting][name] = float(np.mean(vals))
            half_widths[setting][name] = confidence_half_width(vals)
    return FinalResult(list(concatenated), list(separated), means, half_widths)


def final_runs(data: LabeledData, plan: FoldPlan, cfg: TrainConfig,
               n_runs: int = 10, seed: int = 0, jobs: int = 1) -> FinalResult:
    """Repeat cross-validation + ensemble evaluation with distinct seeds."""
    if n_runs < 2:
        raise ValueError("need n_runs >= 2 for confidence intervals")
    test = data.restrict_classes(plan.test_classes)
    concat_reports, sep_reports = [], []
    for run in range(n_runs):
        run_cfg = replace(cfg, seed=derive_seed(seed, 7919, run))
        cv = run_cross_validation(data, plan, run_cfg, jobs=jobs)
        concat, sep = evaluate_ensemble(cv.checkpoints, test)
        concat_reports.append(concat)
        sep_reports.append(sep)
    return aggregate_runs(concat_reports, sep_reports)
