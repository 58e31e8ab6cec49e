"""Embedding-space accuracy metrics.

Retrieval metrics (Precision@1 / Recall@K, R-precision, MAP@R) operate
directly on a neighbor ranking. Clustering metrics (NMI, AMI, pairwise F1)
are included to let the harness demonstrate how uninformative they can be;
they require a clustering step (k-means here).

Per-query convention: with queries == references and self excluded, R is the
number of other samples sharing the query's class. Queries with R = 0 cannot
be scored and are skipped and counted, never scored as zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .embedcore import EmbeddingSet, LabelSet, NeighborRanking, knn
from .errors import (
    DegenerateSeries,
    InsufficientNeighbors,
    KTooLarge,
    LengthMismatch,
)

REPORT_KEYS = ("p_at_1", "r_precision", "map_at_r", "nmi", "ami", "f1",
               "n_queries_evaluated", "n_queries_skipped")


@dataclass(frozen=True)
class QueryRelevance:
    """Per-query retrieval ground truth: R and the ordered correctness flags.

    ``r_counts[q]`` is the number of same-class references for query q;
    ``hits[q]`` has exactly ``r_counts[q]`` flags for the R nearest
    references. Queries with R = 0 are dropped here and tallied in
    ``n_skipped``.
    """

    r_counts: np.ndarray
    hits: list[np.ndarray]
    query_index: np.ndarray
    n_skipped: int


@dataclass(frozen=True)
class MetricReport:
    p_at_1: float
    r_precision: float
    map_at_r: float
    nmi: float | None = None
    ami: float | None = None
    f1: float | None = None
    n_queries_evaluated: int = 0
    n_queries_skipped: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in REPORT_KEYS})


@dataclass(frozen=True)
class ClusterAssignment:
    assignments: np.ndarray
    k: int
    inertia: float

    def __post_init__(self):
        arr = np.asarray(self.assignments, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.k):
            raise ValueError("cluster ids must lie in [0, k)")
        object.__setattr__(self, "assignments", arr)


def _check_ranking(ranking: NeighborRanking, labels: LabelSet) -> None:
    if not ranking.self_excluded:
        raise ValueError("retrieval metrics require a self-excluded ranking")
    if ranking.n_queries != len(labels):
        raise LengthMismatch(f"{ranking.n_queries} queries vs {len(labels)} labels")


def query_relevance(ranking: NeighborRanking, labels: LabelSet) -> QueryRelevance:
    """Extract R and the first-R correctness flags for every scorable query."""
    _check_ranking(ranking, labels)
    lab = labels.labels
    counts = np.bincount(labels.canonical)
    r_all = counts[labels.canonical] - 1
    evaluated = r_all >= 1
    n_skipped = int(np.sum(~evaluated))
    if evaluated.any() and int(r_all.max()) > ranking.k:
        raise InsufficientNeighbors(
            f"ranking holds k={ranking.k} neighbors but some query has R={int(r_all.max())}")
    hit_matrix = lab[ranking.indices] == lab[:, None]
    idx = np.flatnonzero(evaluated)
    hits = [hit_matrix[q, : r_all[q]] for q in idx]
    return QueryRelevance(r_all[idx], hits, idx, n_skipped)


@dataclass(frozen=True)
class PerQueryScores:
    """Individual retrieval scores for every scorable query."""

    query_index: np.ndarray
    p_at_1: np.ndarray
    r_precision: np.ndarray
    map_at_r: np.ndarray
    n_skipped: int


def per_query_scores(ranking: NeighborRanking, labels: LabelSet) -> PerQueryScores:
    rel = query_relevance(ranking, labels)
    if len(rel.hits) == 0:
        raise InsufficientNeighbors("no scorable queries (every class is a singleton)")
    p1 = np.empty(len(rel.hits))
    rp = np.empty(len(rel.hits))
    mapr = np.empty(len(rel.hits))
    for i, (h, r) in enumerate(zip(rel.hits, rel.r_counts)):
        p1[i] = 1.0 if h[0] else 0.0
        rp[i] = h.sum() / r
        prec = np.cumsum(h) / np.arange(1, r + 1)
        mapr[i] = np.sum(prec * h) / r
    return PerQueryScores(rel.query_index, p1, rp, mapr, rel.n_skipped)


def precision_at_k(ranking: NeighborRanking, labels: LabelSet, k: int = 1) -> float:
    """Fraction of queries with a correct neighbor in the top k (Recall@K).

    At k = 1 this is Precision@1: does the single nearest reference share
    the query's class. Every query counts, including those whose class has
    no other reference (they simply score 0); the R >= 1 skipping convention
    belongs to the R-based metrics and the aggregate report.
    """
    _check_ranking(ranking, labels)
    if k < 1 or k > ranking.k:
        raise InsufficientNeighbors(f"k={k} but ranking holds {ranking.k} neighbors")
    lab = labels.labels
    hit = lab[ranking.indices[:, :k]] == lab[:, None]
    return float(hit.any(axis=1).mean())


def r_precision(ranking: NeighborRanking, labels: LabelSet) -> float:
    """Mean over queries of r/R: correct among the R nearest, over R."""
    return float(per_query_scores(ranking, labels).r_precision.mean())


def map_at_r(ranking: NeighborRanking, labels: LabelSet) -> float:
    """Mean average precision truncated at R retrievals per query.

    Per query: (1/R) * sum_{i=1..R} P(i), where P(i) is the precision at i
    when the i-th retrieval is correct and 0 otherwise.
    """
    return float(per_query_scores(ranking, labels).map_at_r.mean())


def compute_report(
    embeddings: EmbeddingSet,
    labels: LabelSet,
    metric: str = "euclidean",
    clustering: bool = False,
    n_clusters: int | None = None,
    cluster_seed: int = 0,
) -> MetricReport:
    """Full retrieval report with queries == references, self excluded.

    With ``clustering`` set, also runs k-means (k defaulting to the class
    count) and attaches NMI/AMI/F1 against the true labels.
    """
    if embeddings.n != len(labels):
        raise LengthMismatch(f"{embeddings.n} embeddings vs {len(labels)} labels")
    if embeddings.n < 2:
        raise InsufficientNeighbors("need at least 2 samples")
    ranking = knn(embeddings, embeddings, k=embeddings.n - 1, exclude_self=True, metric=metric)
    scores = per_query_scores(ranking, labels)
    nmi_v = ami_v = f1_v = None
    if clustering:
        k = n_clusters if n_clusters is not None else labels.num_classes
        assign = kmeans(embeddings, k, seed=cluster_seed)
        nmi_v, ami_v, f1_v = cluster_quality(assign, labels)
    return MetricReport(
        p_at_1=float(scores.p_at_1.mean()),
        r_precision=float(scores.r_precision.mean()),
        map_at_r=float(scores.map_at_r.mean()),
        nmi=nmi_v,
        ami=ami_v,
        f1=f1_v,
        n_queries_evaluated=int(scores.query_index.size),
        n_queries_skipped=scores.n_skipped,
    )


def kmeans(
    e: EmbeddingSet,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-7,
    return_history: bool = False,
):
    """Lloyd's algorithm with k-means++ initialization, deterministic per seed.

    Stops when assignments are stable, the relative inertia change drops
    below ``tol``, or ``max_iter`` iterations elapse. With
    ``return_history`` also returns the per-iteration inertia values.
    """
    x = e.data
    n = x.shape[0]
    if k < 1 or k > n:
        raise KTooLarge(f"k={k} with only {n} samples")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)
    assign = np.zeros(n, dtype=np.int64)
    prev_inertia = np.inf
    history: list[float] = []
    x_sq = np.einsum("ij,ij->i", x, x)
    for _ in range(max_iter):
        d2 = np.maximum(x_sq[:, None] + np.einsum("ij,ij->i", centers, centers)[None, :]
                        - 2.0 * x @ centers.T, 0.0)
        new_assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_assign].sum())
        # re-seed any emptied cluster with the point farthest from its center
        counts = np.bincount(new_assign, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            farthest = np.argsort(d2[np.arange(n), new_assign], kind="stable")[::-1]
            used = set()
            for c, cand in zip(empties, farthest):
                centers[c] = x[cand]
                new_assign[cand] = c
                used.add(int(cand))
            inertia = None  # recompute next round
        stable = np.array_equal(new_assign, assign)
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        if inertia is not None:
            history.append(inertia)
            if stable or abs(prev_inertia - inertia) <= tol * max(inertia, 1e-300):
                prev_inertia = inertia
                break
            prev_inertia = inertia
    d2 = np.maximum(x_sq[:, None] + np.einsum("ij,ij->i", centers, centers)[None, :]
                    - 2.0 * x @ centers.T, 0.0)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    result = ClusterAssignment(assign, k, inertia)
    if return_history:
        return result, history
    return result


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = np.einsum("ij,ij->i", x - centers[0], x - centers[0])
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all points coincide with chosen centers; fall back to uniform
            pick = int(rng.integers(n))
        else:
            u = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(closest), u, side="right"))
            pick = min(pick, n - 1)
        centers[c] = x[pick]
        d2 = np.einsum("ij,ij->i", x - centers[c], x - centers[c])
        closest = np.minimum(closest, d2)
    return centers


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ka = int(a.max()) + 1 if a.size else 0
    kb = int(b.max()) + 1 if b.size else 0
    table = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def _mutual_information(table: np.ndarray, n: int) -> float:
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = np.outer(a, b)[nz].astype(np.float64)
    return float(np.sum((nij / n) * (np.log(nij * n) - np.log(outer))))


def expected_mutual_information(table: np.ndarray) -> float:
    """E[MI] under the permutation (hypergeometric) null model."""
    n = int(table.sum())
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    log_fact = gammaln  # gammaln(x+1) = log(x!)
    emi = 0.0
    for ai in a:
        if ai == 0:
            continue
        for bj in b:
            if bj == 0:
                continue
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            term = (nij / n) * (np.log(nij * n) - math.log(ai * bj))
            log_w = (log_fact(ai + 1) + log_fact(bj + 1)
                     + log_fact(n - ai + 1) + log_fact(n - bj + 1)
                     - log_fact(n + 1) - log_fact(nij + 1)
                     - log_fact(ai - nij + 1) - log_fact(bj - nij + 1)
                     - log_fact(n - ai - bj + nij + 1))
            emi += float(np.sum(term * np.exp(log_w)))
    return emi


def _partitions_identical(a: np.ndarray, b: np.ndarray) -> bool:
    _, ca = np.unique(a, return_inverse=True)
    _, cb = np.unique(b, return_inverse=True)
    table = _contingency(ca, cb)
    return bool(np.all((table > 0).sum(axis=0) <= 1) and np.all((table > 0).sum(axis=1) <= 1))


def nmi(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized mutual information, geometric-mean normalization."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = a.size
    table = _contingency(a, b)
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if _partitions_identical(a, b) else 0.0
    mi = _mutual_information(table, n)
    return float(np.clip(mi / math.sqrt(ha * hb), 0.0, 1.0))


def ami(a: np.ndarray, b: np.ndarray) -> float:
    """Adjusted mutual information: (MI - E[MI]) / (mean(H) - E[MI]), clamped at 0."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = a.size
    table = _contingency(a, b)
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if _partitions_identical(a, b) else 0.0
    mi = _mutual_information(table, n)
    emi = expected_mutual_information(table)
    denom = 0.5 * (ha + hb) - emi
    if denom <= 0.0:
        return 1.0 if _partitions_identical(a, b) else 0.0
    return float(np.clip((mi - emi) / denom, 0.0, 1.0))


def pairwise_f1(a: np.ndarray, b: np.ndarray) -> float:
    """Harmonic mean of pairwise precision/recall over same-group pairs."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    table = _contingency(a, b)
    def pairs(c):
        return float(np.sum(c.astype(np.float64) * (c - 1) / 2))
    tp = pairs(table.ravel())
    pred = pairs(table.sum(axis=1))
    true = pairs(table.sum(axis=0))
    if pred == 0.0 and true == 0.0:
        return 1.0
    if tp == 0.0:
        return 0.0
    precision = tp / pred
    recall = tp / true
    return float(2 * precision * recall / (precision + recall))


def cluster_quality(assignment: ClusterAssignment, labels: LabelSet) -> tuple[float, float, float]:
    """(NMI, AMI, pairwise F1) of a clustering against the true classes."""
    a = assignment.assignments
    if a.shape[0] != len(labels):
        raise LengthMismatch(f"{a.shape[0]} assignments vs {len(labels)} labels")
    l = labels.canonical
    return nmi(a, l), ami(a, l), pairwise_f1(a, l)


def lag_one_autocorrelation(series) -> float:
    """Pearson correlation between the series and its one-step shift."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise DegenerateSeries(f"need a 1-D series of length >= 3, got shape {x.shape}")
    head, tail = x[:-1], x[1:]
    if np.std(head) == 0.0 or np.std(tail) == 0.0:
        raise DegenerateSeries("series is constant on a lag window")
    c = np.corrcoef(head, tail)[0, 1]
    return float(np.clip(c, -1.0, 1.0))
