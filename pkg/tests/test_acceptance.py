"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The heavier criteria (search sanity, end-to-end determinism) take a few
minutes combined.
"""

import statistics
import time

import numpy as np

from metricbench.cli import hypothetical_query_scores
from metricbench.config import load_config
from metricbench.embedcore import EmbeddingSet, LabelSet, pairwise_distances
from metricbench.losses import (
    evaluate_loss,
    gradient_check,
    loss_ids,
    make_class_weights,
    random_batch,
    sample_non_kink_batch,
)
from metricbench.metrics import MetricReport, compute_report, kmeans, nmi
from metricbench.miners import BatchSpec
from metricbench.model import TrainConfig, backward, embed, forward, init_mlp
from metricbench.protocol import (
    aggregate_runs,
    class_split,
    evaluate_ensemble,
    make_folds,
    plan_from_labels,
    run_cross_validation,
)
from metricbench.report import baseline_report, format_mean_ci, run_benchmark
from metricbench.search import HyperparamSpace, hyperparameter_search
from metricbench.synth import SyntheticSpec, synth_dataset


def verdict(name: str, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert ok, line


def test_01_hypothetical_ranking_exactness():
    """Four hand-built rankings with R=10 score exactly as worked out by hand."""
    started = time.perf_counter()
    expected = {
        "only first": (1.00, 0.10, 0.10),
        "first and last": (1.00, 0.20, 0.12),
        "first two": (1.00, 0.20, 0.20),
        "all ten": (1.00, 1.00, 1.00),
    }
    got = hypothetical_query_scores()
    worst = max(abs(g - e) for name in expected
                for g, e in zip(got[name], expected[name]))
    elapsed = time.perf_counter() - started
    verdict("hypothetical-rankings", worst <= 1e-12 and elapsed < 1.0,
            f"worst deviation {worst:.2e}, {elapsed:.3f}s")


def _paired_cloud(rng, centers, sigma, pairs_per_class, jitter=1e-4):
    rows, labels = [], []
    for cls, center in enumerate(centers):
        anchors = center + sigma * rng.standard_normal((pairs_per_class, 2))
        offsets = jitter * rng.standard_normal((pairs_per_class, 2))
        for a, o in zip(anchors, offsets):
            rows.extend([a, a + o])
            labels.extend([cls, cls])
    return EmbeddingSet(np.asarray(rows)), LabelSet(np.asarray(labels))


def test_02_spread_sensitivity():
    """Same classes, decreasing spread: P@1 saturates while MAP@R climbs."""
    started = time.perf_counter()
    rng = np.random.default_rng(11)
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]])
    p1s, maps = [], []
    for sigma in (2.0, 1.0, 0.25):
        emb, labels = _paired_cloud(rng, centers, sigma, pairs_per_class=15)
        report = compute_report(emb, labels)
        p1s.append(report.p_at_1)
        maps.append(report.map_at_r)
    elapsed = time.perf_counter() - started
    ok = (all(p >= 0.99 for p in p1s)
          and maps[0] < maps[1] < maps[2]
          and maps[2] - maps[0] >= 0.10
          and elapsed < 5.0)
    verdict("spread-sensitivity", ok,
            f"P@1 {['%.3f' % p for p in p1s]}, MAP@R {['%.3f' % m for m in maps]}, "
            f"{elapsed:.2f}s")


def test_03_nmi_class_count_inflation():
    """k-means NMI inflates with class count on meaningless embeddings."""
    started = time.perf_counter()

    def mean_nmi(n_classes, per_class, seeds):
        vals = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((n_classes * per_class, 16))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            labels = np.repeat(np.arange(n_classes), per_class)
            out = kmeans(EmbeddingSet(x), n_classes, seed=seed,
                         max_iter=15, tol=1e-4)
            vals.append(nmi(out.assignments, labels))
        return float(np.mean(vals))

    seeds = range(5)
    big = mean_nmi(1000, 20, seeds)
    small = mean_nmi(10, 20, seeds)
    elapsed = time.perf_counter() - started
    verdict("nmi-inflation", big - small >= 0.3 and elapsed < 120.0,
            f"NMI(1000)={big:.3f} NMI(10)={small:.3f} gap={big - small:.3f}, "
            f"{elapsed:.0f}s")


def _oracle_report(embeddings: EmbeddingSet, labels: LabelSet, metric: str):
    """Naive O(n^2) evaluation: full sort per query, simple per-query loops."""
    dist = pairwise_distances(embeddings, embeddings, metric).values
    lab = labels.labels
    n = embeddings.n
    p1, rp, mapr = [], [], []
    skipped = 0
    for q in range(n):
        order = sorted((j for j in range(n) if j != q),
                       key=lambda j: (dist[q, j], j))
        r = int(np.sum(lab == lab[q])) - 1
        if r < 1:
            skipped += 1
            continue
        hits = np.array([lab[j] == lab[q] for j in order[:r]])
        p1.append(1.0 if hits[0] else 0.0)
        rp.append(hits.sum() / r)
        prec = np.cumsum(hits) / np.arange(1, r + 1)
        mapr.append(np.sum(prec * hits) / r)
    return (float(np.mean(p1)), float(np.mean(rp)), float(np.mean(mapr)),
            len(p1), skipped)


def test_04_oracle_equivalence():
    """Production pipeline equals the naive sort-based oracle exactly."""
    rng = np.random.default_rng(21)
    worst_case = None
    for case in range(50):
        n = int(rng.integers(10, 301))
        d = int(rng.integers(2, 8))
        n_classes = int(rng.integers(2, 9))
        metric = "euclidean" if case % 2 == 0 else "cosine"
        emb = EmbeddingSet(rng.standard_normal((n, d)))
        labels = LabelSet(rng.integers(0, n_classes, size=n))
        report = compute_report(emb, labels, metric=metric)
        o_p1, o_rp, o_map, o_eval, o_skip = _oracle_report(emb, labels, metric)
        same = (report.p_at_1 == o_p1 and report.r_precision == o_rp
                and report.map_at_r == o_map
                and report.n_queries_evaluated == o_eval
                and report.n_queries_skipped == o_skip)
        if not same:
            worst_case = (case, n, d, metric)
            break
    verdict("oracle-equivalence", worst_case is None,
            "50 random instances, exact equality" if worst_case is None
            else f"mismatch at {worst_case}")


def test_05_gradient_suite():
    """Every registered loss and the MLP pass finite-difference checks."""
    started = time.perf_counter()
    failures = []
    for loss_id in loss_ids():
        tol = 1e-3 if loss_id == "fastap" else 1e-4
        rng = np.random.default_rng(sum(map(ord, loss_id)) * 7)
        worst = 0.0
        for _ in range(20):
            batch = sample_non_kink_batch(loss_id, rng)
            worst = max(worst, gradient_check(loss_id, batch))
        if worst >= tol:
            failures.append(f"{loss_id}:{worst:.2e}")
    # end-to-end MLP backward against finite differences, 10 seeds
    worst_mlp = 0.0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        model = init_mlp((5, 8, 4), rng)
        x = rng.standard_normal((8, 5))
        y = np.repeat(np.arange(4), 2)
        emb, cache = forward(model, x)
        out = evaluate_loss("contrastive", emb.data, y, {"neg_margin": 0.7})
        grads = backward(model, cache, out.grad_embeddings)
        step = 1e-6
        for p, g in zip(model.parameters(), grads):
            flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = evaluate_loss("contrastive", embed(model, x).data, y,
                                       {"neg_margin": 0.7}).value
                flat[i] = orig - step
                f_minus = evaluate_loss("contrastive", embed(model, x).data, y,
                                        {"neg_margin": 0.7}).value
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * step)
                worst_mlp = max(worst_mlp, abs(numeric - gflat[i])
                                / max(abs(numeric), abs(gflat[i]), 1e-6))
    elapsed = time.perf_counter() - started
    ok = not failures and worst_mlp < 1e-4 and elapsed < 120.0
    verdict("gradient-suite", ok,
            f"losses {'all ok' if not failures else failures}, "
            f"mlp worst {worst_mlp:.2e}, {elapsed:.0f}s")


def test_06_reduction_identities():
    """cosface(m=0) == arcface(m=0) == normalized_softmax at equal scale."""
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(50):
        batch = random_batch(rng, classes=4, per_class=2, dim=6)
        weights = make_class_weights(np.unique(batch.labels), 6, rng)
        ref = evaluate_loss("normalized_softmax", batch.embeddings, batch.labels,
                            {"scale": 24.0}, state=weights.copy())
        for kind in ("cosface", "arcface"):
            out = evaluate_loss(kind, batch.embeddings, batch.labels,
                                {"scale": 24.0, "margin": 0.0},
                                state=weights.copy())
            worst = max(worst, abs(out.value - ref.value))
            worst = max(worst, float(np.abs(out.grad_embeddings
                                            - ref.grad_embeddings).max()))
            worst = max(worst, float(np.abs(out.grad_params["weights"]
                                            - ref.grad_params["weights"]).max()))
    verdict("reduction-identities", worst <= 1e-6, f"worst deviation {worst:.2e}")


def test_07_protocol_integrity():
    """1000 random split configurations: disjoint with full coverage."""
    rng = np.random.default_rng(41)
    violations = 0
    for _ in range(1000):
        n_classes = int(rng.integers(8, 120))
        ids = np.sort(rng.choice(100000, size=n_classes, replace=False))
        labels = LabelSet(np.repeat(ids, 2))
        cv, test = class_split(labels)
        plan = make_folds(cv, test)
        seen = set()
        for i in range(plan.n_folds):
            train, val = plan.fold(i)
            if set(train) & set(val) or set(train) & set(test) or set(val) & set(test):
                violations += 1
            if set(train) | set(val) != set(cv):
                violations += 1
            seen |= set(val)
        if seen != set(cv) or set(cv) | set(test) != set(ids.tolist()):
            violations += 1
    verdict("protocol-integrity", violations == 0, f"{violations} violations")


DETERMINISM_CONFIG = """
seed = 1234

[dataset.synthetic]
num_classes = 16
dim = 20
samples_per_class = 30
separation = 2.0
spread = 0.3
seed = 5

[[losses]]
id = "contrastive"
[losses.space]
neg_margin = { lo = 0.2, hi = 1.2 }

[[losses]]
id = "triplet"
[losses.space]
margin = { lo = 0.05, hi = 0.5, log = true }

[[losses]]
id = "ntxent"
[losses.space]
temperature = { lo = 0.05, hi = 0.5, log = true }

[batch]
classes_per_batch = 4
samples_per_class = 4

[trainer]
hidden = [16]
embed_dim = 4
lr = 1e-2
max_epochs = 4
validation_interval = 5
plateau_patience = 2

[search]
budget = 4

[final]
n_runs = 3
"""


def test_08_end_to_end_determinism(tmp_path):
    """Two full bench executions produce byte-identical report JSON."""
    started = time.perf_counter()
    cfg_path = tmp_path / "bench.toml"
    cfg_path.write_text(DETERMINISM_CONFIG)
    payloads = []
    for run in ("a", "b"):
        cfg = load_config(cfg_path)
        report = run_benchmark(cfg, out_dir=tmp_path / run)
        payloads.append((tmp_path / run / "report.json").read_bytes())
        for row in report.rows:
            assert "error" not in row, row.get("error")
    elapsed = time.perf_counter() - started
    verdict("end-to-end-determinism",
            payloads[0] == payloads[1] and elapsed < 900.0,
            f"{len(payloads[0])} bytes, {elapsed:.0f}s")


def test_09_learnability():
    """Contrastive and triplet beat the untrained baseline decisively."""
    started = time.perf_counter()
    spec = SyntheticSpec(num_classes=16, dim=8, samples_per_class=30,
                         separation=3.0, spread=0.15, seed=7, noise_dims=16)
    data = synth_dataset(spec)
    plan = plan_from_labels(data.labels)
    test = data.restrict_classes(plan.test_classes)
    baseline, _ = baseline_report(test, 4 * 16)
    scores = {}
    for loss_id, params in (("contrastive", {"neg_margin": 0.7}),
                            ("triplet", {"margin": 0.1})):
        cfg = TrainConfig(loss_id=loss_id, loss_params=params,
                          batch_spec=BatchSpec(4, 8), hidden=(96,), embed_dim=16,
                          lr=1e-2, max_epochs=80, validation_interval=11,
                          plateau_patience=12, seed=2)
        cv = run_cross_validation(data, plan, cfg)
        concat, _ = evaluate_ensemble(cv.checkpoints, test)
        scores[loss_id] = concat.map_at_r
    elapsed = time.perf_counter() - started
    ok = all(s >= 0.9 and s >= baseline.map_at_r + 0.05 for s in scores.values())
    verdict("learnability", ok,
            f"baseline {baseline.map_at_r:.3f}, "
            + ", ".join(f"{k} {v:.3f}" for k, v in scores.items())
            + f", {elapsed:.0f}s")


def test_10_search_sanity():
    """Search over a margin space spanning 0.1 and 2.0 lands below 1.0."""
    started = time.perf_counter()
    spec = SyntheticSpec(num_classes=24, dim=8, samples_per_class=15,
                         separation=2.0, spread=1.0, seed=7)
    data = synth_dataset(spec)
    plan = plan_from_labels(data.labels)
    space = HyperparamSpace.from_dict(
        {"margin": {"lo": 0.05, "hi": 2.5, "log": True}})
    base = TrainConfig(loss_id="triplet", batch_spec=BatchSpec(6, 5),
                       hidden=(32,), embed_dim=8, lr=1e-3, max_epochs=120,
                       validation_interval=10, plateau_patience=12, seed=0)
    picks = []
    for rep in range(10):
        result = hyperparameter_search(space, budget=12, strategy="random",
                                       base_cfg=base, data=data, plan=plan,
                                       seed=rep)
        picks.append(result.best.params["margin"])
    wins = sum(1 for m in picks if m < 1.0)
    elapsed = time.perf_counter() - started
    verdict("search-sanity", wins >= 9,
            f"{wins}/10 selected margin < 1.0, picks "
            f"{['%.2f' % m for m in picks]}, {elapsed:.0f}s")


def test_11_ci_formatting():
    """Injected per-run scores reproduce the hand-computed mean and CI."""
    scores = [66.2, 66.6, 67.0, 66.4, 66.8]
    reports = [MetricReport(s / 100, s / 100, s / 100, n_queries_evaluated=10)
               for s in scores]
    final = aggregate_runs(reports, reports)
    mean = 100 * final.means["concatenated"]["map_at_r"]
    hw = 100 * final.half_widths["concatenated"]["map_at_r"]
    oracle_mean = statistics.mean(scores)
    oracle_hw = 1.96 * statistics.stdev(scores) / np.sqrt(len(scores))
    rendered = format_mean_ci(mean, hw)
    expected = f"{oracle_mean:.2f} ± {oracle_hw:.2f}"
    ok = (abs(mean - oracle_mean) <= 1e-9 and abs(hw - oracle_hw) <= 1e-9
          and rendered == expected)
    verdict("ci-formatting", ok, f"rendered {rendered!r} vs oracle {expected!r}")
