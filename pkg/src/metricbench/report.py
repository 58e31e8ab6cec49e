"""Benchmark orchestration and report emission.

``run_benchmark`` runs, per loss: hyperparameter search (when a space is
given), then the multi-run final evaluation; plus an untrained baseline row
(raw inputs, optionally PCA-reduced, L2-normalized) on the test classes.
Reports serialize to JSON (the source of truth), CSV, a publication-style
markdown table with "mean +/- half-width" cells, and plot data with relative
improvements over the contrastive and triplet rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import BenchConfig
from .dataset import LabeledData
from .embedcore import EmbeddingSet, l2_normalize, pca_reduce
from .errors import IoError
from .metrics import MetricReport, compute_report
from .protocol import derive_seed, final_runs, plan_from_labels
from .search import HyperparamSpace, hyperparameter_search

REPORT_FORMATS = ("json", "csv", "markdown", "plotdata")
IMPROVEMENT_METRICS = ("map_at_r", "p_at_1")
SETTINGS = ("concatenated", "separated")
BASELINE_ROW = "untrained"


def format_mean_ci(mean: float, half_width: float) -> str:
    """Render percentages the way the results tables do: '66.61 ± 0.44'."""
    return f"{mean:.2f} ± {half_width:.2f}"


@dataclass
class BenchmarkReport:
    baseline: dict
    rows: list[dict] = field(default_factory=list)
    relative_improvement: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "rows": self.rows,
            "relative_improvement": self.relative_improvement,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(d["baseline"], d["rows"], d["relative_improvement"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self, loss_id: str) -> dict | None:
        for r in self.rows:
            if r["loss_id"] == loss_id:
                return r
        return None


def baseline_report(test: LabeledData, target_dim: int) -> tuple[MetricReport, int]:
    """Untrained-features report: PCA to target_dim when that reduces, then
    L2-normalize. Returns the report and the dimensionality actually used."""
    feasible = min(target_dim, test.dim, test.n - 1)
    emb = EmbeddingSet(test.inputs)
    if feasible < test.dim:
        emb = pca_reduce(emb, feasible)
        used = feasible
    else:
        used = test.dim
    emb = l2_normalize(emb)
    return compute_report(emb, test.labels), used


def _relative_improvements(rows: list[dict]) -> dict:
    by_id = {r["loss_id"]: r for r in rows if "error" not in r}
    out: dict = {}
    for base_id in ("contrastive", "triplet"):
        base = by_id.get(base_id)
        if base is None:
            continue
        table: dict = {}
        for r in rows:
            if "error" in r or r["loss_id"] == base_id:
                continue
            entry: dict = {}
            for setting in SETTINGS:
                entry[setting] = {}
                for metric in IMPROVEMENT_METRICS:
                    base_val = base["final"]["means"][setting][metric]
                    val = r["final"]["means"][setting][metric]
                    entry[setting][metric] = 100.0 * (val - base_val) / base_val
            table[r["loss_id"]] = entry
        out[f"vs_{base_id}"] = table
    return out


def run_benchmark(cfg: BenchConfig, out_dir: str | None = None,
                  progress=None) -> BenchmarkReport:
    """Full multi-loss benchmark on one dataset and split."""
    data = cfg.load_dataset()
    plan = plan_from_labels(data.labels)
    test = data.restrict_classes(plan.test_classes)
    embed_dim = int(cfg.trainer.get("embed_dim", 8))

    concat_base, concat_dim = baseline_report(test, 4 * embed_dim)
    sep_base, sep_dim = baseline_report(test, embed_dim)
    baseline = {
        "name": BASELINE_ROW,
        "concatenated": {"dim": concat_dim, **concat_base.to_dict()},
        "separated": {"dim": sep_dim, **sep_base.to_dict()},
    }

    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    for index, spec in enumerate(cfg.loss_specs):
        if progress:
            progress(f"loss {spec.loss_id}")
        row: dict = {
            "loss_id": spec.loss_id,
            "miner": spec.miner,
            "config_hash": cfg.config_hash(),
        }
        try:
            base_cfg = cfg.train_config(spec)
            best_params = dict(spec.params)
            if spec.space:
                trials_file = None
                if out_path:
                    trials_file = (out_path / f"trials_{spec.loss_id}.jsonl").open("w")
                try:
                    def on_trial(rec, fh=trials_file):
                        if fh:
                            fh.write(json.dumps(rec.to_dict()) + "\n")
                    result = hyperparameter_search(
                        HyperparamSpace.from_dict(spec.space), cfg.budget,
                        cfg.strategy, base_cfg, data, plan,
                        seed=derive_seed(cfg.seed, 31337, index),
                        jobs=cfg.jobs, on_trial=on_trial)
                finally:
                    if trials_file:
                        trials_file.close()
                best_params = {**best_params, **result.best.params}
                row["search"] = {
                    "budget": cfg.budget,
                    "strategy": cfg.strategy,
                    "best_mean_validation": result.best.mean_score,
                }
            final_cfg = replace(base_cfg,
                                loss_params={**base_cfg.loss_params, **best_params})
            final = final_runs(data, plan, final_cfg, n_runs=cfg.n_runs,
                               seed=derive_seed(cfg.seed, 424243, index),
                               jobs=cfg.jobs)
            row["best_params"] = best_params
            row["final"] = final.to_dict()
        except Exception as exc:  # row failure must not sink the report
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    report = BenchmarkReport(baseline, rows, _relative_improvements(rows))
    if out_path:
        emit_report(report, out_path, REPORT_FORMATS)
    return report


def _table_cells(report: BenchmarkReport) -> list[dict]:
    """Flat per-row cells shared by the CSV and markdown emitters."""
    cells = []
    base = report.baseline
    cells.append({
        "method": BASELINE_ROW,
        **{f"{s}_{m}": 100.0 * base[s][m] for s in SETTINGS
           for m in ("p_at_1", "r_precision", "map_at_r")},
        "ci": False,
    })
    for row in report.rows:
        if "error" in row:
            cells.append({"method": row["loss_id"], "error": row["error"], "ci": False})
            continue
        entry = {"method": row["loss_id"], "ci": True}
        for s in SETTINGS:
            for m in ("p_at_1", "r_precision", "map_at_r"):
                entry[f"{s}_{m}"] = 100.0 * row["final"]["means"][s][m]
                entry[f"{s}_{m}_hw"] = 100.0 * row["final"]["half_widths"][s][m]
        cells.append(entry)
    return cells


def render_markdown(report: BenchmarkReport) -> str:
    header = ("| Method | Concatenated P@1 | Concatenated RP | Concatenated MAP@R "
              "| Separated P@1 | Separated RP | Separated MAP@R |")
    rule = "|---" * 7 + "|"
    lines = [header, rule]
    for cell in _table_cells(report):
        if "error" in cell:
            lines.append(f"| {cell['method']} | FAILED: {cell['error']} |" + " |" * 5)
            continue
        cols = []
        for s in SETTINGS:
            for m in ("p_at_1", "r_precision", "map_at_r"):
                if cell["ci"]:
                    cols.append(format_mean_ci(cell[f"{s}_{m}"], cell[f"{s}_{m}_hw"]))
                else:
                    cols.append(f"{cell[f'{s}_{m}']:.2f}")
        lines.append("| " + " | ".join([cell["method"], *cols]) + " |")
    return "\n".join(lines) + "\n"


def render_csv(report: BenchmarkReport) -> str:
    cols = ["method"]
    for s in SETTINGS:
        for m in ("p_at_1", "r_precision", "map_at_r"):
            cols.append(f"{s}_{m}")
            cols.append(f"{s}_{m}_half_width")
    lines = [",".join(cols)]
    for cell in _table_cells(report):
        if "error" in cell:
            lines.append(",".join([cell["method"]] + [""] * (len(cols) - 1)))
            continue
        values = [cell["method"]]
        for s in SETTINGS:
            for m in ("p_at_1", "r_precision", "map_at_r"):
                values.append(repr(cell[f"{s}_{m}"]))
                values.append(repr(cell.get(f"{s}_{m}_hw", "")) if cell["ci"] else "")
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def render_plotdata(report: BenchmarkReport) -> str:
    bars = []
    for base_key, table in report.relative_improvement.items():
        for loss_id, entry in table.items():
            for setting in SETTINGS:
                for metric in IMPROVEMENT_METRICS:
                    bars.append({
                        "loss": loss_id,
                        "baseline": base_key.removeprefix("vs_"),
                        "setting": setting,
                        "metric": metric,
                        "relative_improvement_pct": entry[setting][metric],
                    })
    return json.dumps({"bars": bars}, indent=2, sort_keys=True)


def emit_report(report: BenchmarkReport, out_dir, formats=REPORT_FORMATS) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            path = out / "report.json"
            path.write_text(report.to_json())
            written.append(path)
        if "csv" in formats:
            path = out / "report.csv"
            path.write_text(render_csv(report))
            written.append(path)
        if "markdown" in formats:
            path = out / "report.md"
            path.write_text(render_markdown(report))
            written.append(path)
        if "plotdata" in formats:
            path = out / "plotdata.json"
            path.write_text(render_plotdata(report))
            written.append(path)
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return written
