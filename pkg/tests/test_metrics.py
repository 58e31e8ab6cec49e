import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn import metrics as skmetrics

from metricbench.cli import hypothetical_instance
from metricbench.embedcore import EmbeddingSet, LabelSet, knn
from metricbench.errors import DegenerateSeries, InsufficientNeighbors, KTooLarge
from metricbench.metrics import (
    ClusterAssignment,
    MetricReport,
    ami,
    cluster_quality,
    compute_report,
    kmeans,
    lag_one_autocorrelation,
    map_at_r,
    nmi,
    pairwise_f1,
    per_query_scores,
    precision_at_k,
    r_precision,
)


def query_zero_scores(correct_ranks, total_r=10):
    emb, labels = hypothetical_instance(set(correct_ranks), total_r)
    ranking = knn(emb, emb, k=emb.n - 1, exclude_self=True)
    scores = per_query_scores(ranking, labels)
    q0 = int(np.flatnonzero(scores.query_index == 0)[0])
    return (scores.p_at_1[q0], scores.r_precision[q0], scores.map_at_r[q0])


class TestRetrievalMetrics:
    # the four hypothetical retrieval results with R = 10
    @pytest.mark.parametrize("ranks,expected", [
        ({1}, (1.0, 0.10, 0.10)),
        ({1, 10}, (1.0, 0.20, 0.12)),
        ({1, 2}, (1.0, 0.20, 0.20)),
        (set(range(1, 11)), (1.0, 1.00, 1.00)),
    ])
    def test_hypothetical_rankings(self, ranks, expected):
        p1, rp, mapr = query_zero_scores(ranks)
        assert abs(p1 - expected[0]) <= 1e-12
        assert abs(rp - expected[1]) <= 1e-12
        assert abs(mapr - expected[2]) <= 1e-12

    def test_hand_enumeration_r5(self):
        # R = 5, correct at ranks 1, 3, 4
        p1, rp, mapr = query_zero_scores({1, 3, 4}, total_r=5)
        assert abs(rp - 0.6) <= 1e-12
        assert abs(mapr - (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 5.0) <= 1e-12

    def test_two_singletons_precision_zero(self):
        emb = EmbeddingSet(np.array([[0.0], [1.0]]))
        labels = LabelSet(np.array([0, 1]))
        ranking = knn(emb, emb, k=1, exclude_self=True)
        assert precision_at_k(ranking, labels, k=1) == 0.0

    def test_duplicate_points_per_class(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((5, 3))
        emb = EmbeddingSet(np.vstack([pts, pts]))
        labels = LabelSet(np.concatenate([np.arange(5), np.arange(5)]))
        ranking = knn(emb, emb, k=9, exclude_self=True)
        assert precision_at_k(ranking, labels, k=1) == 1.0
        assert r_precision(ranking, labels) == 1.0

    def test_zero_correct_map_is_zero(self):
        # classes interleaved so the R nearest are always wrong
        emb = EmbeddingSet(np.array([[0.0], [1.0], [10.0], [11.0]]))
        labels = LabelSet(np.array([0, 1, 0, 1]))
        ranking = knn(emb, emb, k=3, exclude_self=True)
        scores = per_query_scores(ranking, labels)
        assert scores.map_at_r[0] == 0.0

    def test_r_zero_queries_skipped_and_counted(self):
        emb = EmbeddingSet(np.array([[0.0], [0.1], [5.0]]))
        labels = LabelSet(np.array([0, 0, 7]))
        report = compute_report(emb, labels)
        assert report.n_queries_evaluated == 2
        assert report.n_queries_skipped == 1

    def test_insufficient_neighbors_raises(self):
        emb = EmbeddingSet(np.array([[0.0], [1.0], [2.0]]))
        labels = LabelSet(np.array([0, 0, 0]))
        ranking = knn(emb, emb, k=1, exclude_self=True)
        with pytest.raises(InsufficientNeighbors):
            r_precision(ranking, labels)  # R = 2 but ranking holds 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(6, 40), st.integers(2, 5))
def test_map_le_rprecision_property(seed, n, n_classes, ):
    rng = np.random.default_rng(seed)
    emb = EmbeddingSet(rng.standard_normal((n, 3)))
    labels = LabelSet(rng.integers(0, n_classes, size=n))
    try:
        ranking = knn(emb, emb, k=n - 1, exclude_self=True)
        scores = per_query_scores(ranking, labels)
    except InsufficientNeighbors:
        return
    assert np.all(scores.map_at_r <= scores.r_precision + 1e-12)
    assert np.all(scores.r_precision <= 1.0 + 1e-12)
    # all three hit 1.0 iff every query's R nearest are all correct
    if np.all(scores.map_at_r >= 1.0 - 1e-12):
        assert np.all(scores.r_precision == 1.0)
        assert np.all(scores.p_at_1 == 1.0)


def test_metrics_invariant_under_orthogonal_transform():
    rng = np.random.default_rng(5)
    emb = rng.standard_normal((60, 6))
    labels = LabelSet(rng.integers(0, 6, size=60))
    q, r = np.linalg.qr(rng.standard_normal((6, 6)))
    rotated = emb @ (q * np.sign(np.diag(r)))
    a = compute_report(EmbeddingSet(emb), labels)
    b = compute_report(EmbeddingSet(rotated), labels)
    assert abs(a.p_at_1 - b.p_at_1) <= 1e-9
    assert abs(a.r_precision - b.r_precision) <= 1e-9
    assert abs(a.map_at_r - b.map_at_r) <= 1e-9


class TestKmeans:
    def test_k_equals_n(self):
        rng = np.random.default_rng(1)
        e = EmbeddingSet(rng.standard_normal((8, 2)))
        out = kmeans(e, 8, seed=0)
        assert abs(out.inertia) <= 1e-12
        assert len(set(out.assignments.tolist())) == 8

    def test_k_one_total_deviation(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((30, 3))
        out = kmeans(EmbeddingSet(x), 1, seed=0)
        expected = float(((x - x.mean(axis=0)) ** 2).sum())
        assert abs(out.inertia - expected) <= 1e-8 * max(1.0, expected)

    def test_two_blobs_recovered(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((40, 4)) * 0.05 + np.array([10, 0, 0, 0])
        b = rng.standard_normal((40, 4)) * 0.05 - np.array([10, 0, 0, 0])
        out = kmeans(EmbeddingSet(np.vstack([a, b])), 2, seed=0)
        first, second = out.assignments[:40], out.assignments[40:]
        assert len(set(first.tolist())) == 1
        assert len(set(second.tolist())) == 1
        assert first[0] != second[0]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        e = EmbeddingSet(rng.standard_normal((50, 5)))
        a = kmeans(e, 7, seed=42)
        b = kmeans(e, 7, seed=42)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.inertia == b.inertia

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(5)
        e = EmbeddingSet(rng.standard_normal((120, 4)))
        _, history = kmeans(e, 6, seed=1, return_history=True)
        assert len(history) >= 2
        diffs = np.diff(history)
        assert np.all(diffs <= 1e-9)

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            kmeans(EmbeddingSet(np.eye(3)), 4)


class TestClusterQuality:
    def test_perfect_partition(self):
        labels = LabelSet(np.array([0, 0, 1, 1, 2, 2]))
        assign = ClusterAssignment(np.array([2, 2, 0, 0, 1, 1]), 3, 0.0)
        out = cluster_quality(assign, labels)
        assert out == (1.0, 1.0, 1.0)

    def test_independent_partitions_zero_nmi(self):
        labels = LabelSet(np.array([0, 0, 1, 1]))
        assign = ClusterAssignment(np.array([0, 1, 0, 1]), 2, 0.0)
        q = cluster_quality(assign, labels)
        assert q[0] == 0.0

    def test_single_cluster_conventions(self):
        one = ClusterAssignment(np.zeros(4, dtype=int), 1, 0.0)
        assert cluster_quality(one, LabelSet(np.zeros(4, dtype=int)))[0] == 1.0
        assert cluster_quality(one, LabelSet(np.array([0, 0, 1, 1])))[0] == 0.0

    def test_against_sklearn(self):
        rng = np.random.default_rng(6)
        for _ in range(8):
            n = int(rng.integers(20, 120))
            a = rng.integers(0, int(rng.integers(2, 8)), size=n)
            b = rng.integers(0, int(rng.integers(2, 8)), size=n)
            assert abs(nmi(a, b) - skmetrics.normalized_mutual_info_score(
                b, a, average_method="geometric")) <= 1e-10
            ours = ami(a, b)
            theirs = skmetrics.adjusted_mutual_info_score(b, a, average_method="arithmetic")
            assert abs(ours - max(theirs, 0.0)) <= 1e-8

    def test_f1_against_pair_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            n = int(rng.integers(10, 60))
            a = rng.integers(0, 4, size=n)
            b = rng.integers(0, 5, size=n)
            tp = fp = fn = 0
            for i in range(n):
                for j in range(i + 1, n):
                    same_a = a[i] == a[j]
                    same_b = b[i] == b[j]
                    tp += same_a and same_b
                    fp += same_a and not same_b
                    fn += same_b and not same_a
            if tp == 0:
                expected = 0.0
            else:
                p = tp / (tp + fp)
                r = tp / (tp + fn)
                expected = 2 * p * r / (p + r)
            assert abs(pairwise_f1(a, b) - expected) <= 1e-12

    def test_nmi_inflation_with_class_count(self):
        # Monte-Carlo analog of NMI rising with the number of classes even
        # for meaningless random assignments
        rng = np.random.default_rng(8)
        n = 2000

        def mean_nmi(k, draws=3):
            vals = []
            for _ in range(draws):
                labels = np.repeat(np.arange(k), n // k)
                assign = rng.integers(0, k, size=labels.size)
                vals.append(nmi(assign, labels))
            return float(np.mean(vals))

        assert mean_nmi(1000) > mean_nmi(10) + 0.3


class TestLagOneAutocorrelation:
    def test_constant_rejected(self):
        with pytest.raises(DegenerateSeries):
            lag_one_autocorrelation([2.0, 2.0, 2.0, 2.0])

    def test_too_short_rejected(self):
        with pytest.raises(DegenerateSeries):
            lag_one_autocorrelation([1.0, 2.0])

    def test_alternating_negative(self):
        assert lag_one_autocorrelation([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) < 0.0

    def test_direct_formula_oracle(self):
        series = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        head = np.array(series[:-1])
        tail = np.array(series[1:])
        expected = float(
            np.sum((head - head.mean()) * (tail - tail.mean()))
            / np.sqrt(np.sum((head - head.mean()) ** 2) * np.sum((tail - tail.mean()) ** 2)))
        assert abs(lag_one_autocorrelation(series) - expected) <= 1e-12

    def test_random_in_bounds(self):
        rng = np.random.default_rng(9)
        value = lag_one_autocorrelation(rng.standard_normal(100))
        assert -1.0 <= value <= 1.0


def test_report_json_keys_fixed():
    report = MetricReport(0.5, 0.4, 0.3, n_queries_evaluated=10, n_queries_skipped=1)
    payload = report.to_dict()
    assert list(payload) == ["p_at_1", "r_precision", "map_at_r", "nmi", "ami",
                             "f1", "n_queries_evaluated", "n_queries_skipped"]
    assert MetricReport.from_dict(payload) == report
