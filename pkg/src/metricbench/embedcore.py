"""Core embedding-space numerics: storage, normalization, distances, exact k-NN, PCA.

All math is done in float64. Every operation here is a pure function over
immutable inputs, so concurrent use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadDim, DegenerateData, DimMismatch, KTooLarge, LengthMismatch, ZeroVector

EPS_NORM = 1e-12

METRICS = ("euclidean", "cosine")


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimMismatch(f"embedding data must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """n x d matrix of sample embeddings, one row per sample."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_matrix(self.data)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimMismatch(f"need n >= 1 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embeddings contain NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Non-negative integer class id per sample.

    Class ids need not be contiguous; ``classes`` holds the sorted distinct
    ids and ``canonical`` maps each sample to its index in that order.
    """

    labels: np.ndarray
    classes: np.ndarray = field(init=False)
    canonical: np.ndarray = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 1:
            raise LengthMismatch(f"labels must be 1-D, got shape {arr.shape}")
        if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0):
            arr = arr.astype(np.int64)
            if arr.min() < 0:
                raise ValueError("class ids must be non-negative")
        arr = arr.astype(np.int64)
        classes, canonical = np.unique(arr, return_inverse=True)
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "canonical", canonical.astype(np.int64))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classes.shape[0]


@dataclass(frozen=True)
class DistanceMatrix:
    """n_query x n_ref matrix of non-negative distances under one metric."""

    values: np.ndarray
    metric: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class NeighborRanking:
    """Per-query neighbor lists, ascending by distance, ties by ascending index.

    ``indices`` and ``distances`` are (n_query, k) arrays.
    """

    indices: np.ndarray
    distances: np.ndarray
    self_excluded: bool
    metric: str

    @property
    def n_queries(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def l2_normalize(e: EmbeddingSet, eps: float = EPS_NORM) -> EmbeddingSet:
    """Scale every row to unit Euclidean norm.

    Raises:
        ZeroVector: if any row norm is <= eps.
    """
    norms = np.linalg.norm(e.data, axis=1)
    if np.any(norms <= eps):
        bad = int(np.argmax(norms <= eps))
        raise ZeroVector(f"row {bad} has norm {norms[bad]:.3e} <= {eps:.0e}")
    return EmbeddingSet(e.data / norms[:, None])


def pairwise_distances(q: EmbeddingSet, r: EmbeddingSet, metric: str = "euclidean") -> DistanceMatrix:
    """Distance between every query row and every reference row.

    Euclidean uses the clamped quadratic expansion
    sqrt(max(0, |q|^2 + |r|^2 - 2 q.r)) so rounding never produces a negative
    radicand. Cosine distance is 1 - cos(q, r), in [0, 2].

    Raises:
        DimMismatch: if query and reference dimensionalities differ.
    """
    if q.d != r.d:
        raise DimMismatch(f"query d={q.d} vs reference d={r.d}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    same = q.data is r.data or (q.data.shape == r.data.shape and np.array_equal(q.data, r.data))
    gram = q.data @ r.data.T
    if metric == "euclidean":
        q_sq = np.einsum("ij,ij->i", q.data, q.data)
        r_sq = np.einsum("ij,ij->i", r.data, r.data)
        sq = np.maximum(q_sq[:, None] + r_sq[None, :] - 2.0 * gram, 0.0)
        values = np.sqrt(sq)
    else:
        q_norm = np.linalg.norm(q.data, axis=1)
        r_norm = np.linalg.norm(r.data, axis=1)
        if np.any(q_norm <= EPS_NORM) or np.any(r_norm <= EPS_NORM):
            raise ZeroVector("cosine distance undefined for zero vectors")
        cos = gram / (q_norm[:, None] * r_norm[None, :])
        values = np.clip(1.0 - cos, 0.0, 2.0)
    if same:
        # query set == reference set: force an exactly zero diagonal and
        # exact symmetry, which BLAS rounding does not guarantee
        np.fill_diagonal(values, 0.0)
        values = np.minimum(values, values.T)
    return DistanceMatrix(values, metric)


def knn(
    q: EmbeddingSet,
    r: EmbeddingSet,
    k: int,
    exclude_self: bool = False,
    metric: str = "euclidean",
    chunk_size: int = 1024,
) -> NeighborRanking:
    """Exact k nearest references per query.

    Results are identical to a full per-query sort: ascending distance with
    ties broken by ascending reference index. When ``exclude_self`` is set the
    query and reference sets must align index-wise (qi never matches ri).
    Ranking work is chunked over queries; the output is independent of
    ``chunk_size``.

    Raises:
        KTooLarge: if k exceeds the available reference count.
    """
    available = r.n - (1 if exclude_self else 0)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > available:
        raise KTooLarge(f"k={k} > {available} available references")
    dist = pairwise_distances(q, r, metric).values
    if exclude_self:
        if q.n > r.n:
            raise DimMismatch("exclude_self requires query indices to exist in the reference set")
        dist = dist.copy()
        rows = np.arange(q.n)
        dist[rows, rows] = np.inf
    indices = np.empty((q.n, k), dtype=np.int64)
    distances = np.empty((q.n, k), dtype=np.float64)
    for lo in range(0, q.n, chunk_size):
        hi = min(lo + chunk_size, q.n)
        block = dist[lo:hi]
        # stable sort on distance keeps equal-distance refs in ascending
        # index order, which is the documented tie-break
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        indices[lo:hi] = order
        distances[lo:hi] = np.take_along_axis(block, order, axis=1)
    return NeighborRanking(indices, distances, exclude_self, metric)


def pca_reduce(e: EmbeddingSet, target_dim: int) -> EmbeddingSet:
    """Project mean-centered data onto the top principal directions.

    Directions come from a symmetric eigendecomposition of the d x d
    covariance, ordered by descending eigenvalue. Sign convention: the
    largest-magnitude component of each direction is made positive, so the
    output is deterministic.

    Raises:
        BadDim: if target_dim is outside [1, min(n-1, d)].
        DegenerateData: if the eigendecomposition fails to converge.
    """
    n, d = e.n, e.d
    if n < 2:
        raise BadDim(f"PCA needs n >= 2 samples, got {n}")
    limit = min(n - 1, d)
    if not 1 <= target_dim <= limit:
        raise BadDim(f"target_dim={target_dim} outside [1, {limit}]")
    centered = e.data - e.data.mean(axis=0)
    cov = (centered.T @ centered) / (n - 1)
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateData(f"covariance eigendecomposition failed: {exc}") from exc
    order = np.argsort(eigvals, kind="stable")[::-1][:target_dim]
    components = eigvecs[:, order]
    flips = np.sign(components[np.argmax(np.abs(components), axis=0), np.arange(target_dim)])
    flips[flips == 0] = 1.0
    components = components * flips[None, :]
    return EmbeddingSet(centered @ components)
