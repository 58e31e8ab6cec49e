"""Shared machinery for the loss zoo: batch type, outputs, pair enumeration,
and distance/similarity gradients.

Every loss works in ambient coordinates: cosine similarities carry the full
quotient-rule gradient and Euclidean distances the usual difference-direction
gradient, so analytic gradients can be checked by central finite differences
without re-projecting onto the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Batch:
    """A training batch: L2-normalized embeddings plus class labels."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ShapeMismatch(f"batch embeddings must be (b>=2, d), got {emb.shape}")
        if lab.shape != (emb.shape[0],):
            raise ShapeMismatch(f"{emb.shape[0]} embeddings vs labels shape {lab.shape}")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            worst = float(np.abs(norms - 1.0).max())
            raise ShapeMismatch(f"batch rows must be unit-norm (worst deviation {worst:.2e})")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", lab)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class LossOutput:
    """Loss value with gradients w.r.t. embeddings and learnable parameters."""

    value: float
    grad_embeddings: np.ndarray
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)
    n_active: int = 0


def ordered_positive_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (anchor, positive) index pairs with equal labels, anchor != positive."""
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return np.nonzero(same)


def ordered_negative_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = labels[:, None] != labels[None, :]
    return np.nonzero(diff)


def unordered_positive_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    same = np.triu(same, k=1)
    return np.nonzero(same)


def unordered_negative_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = labels[:, None] != labels[None, :]
    diff = np.triu(diff, k=1)
    return np.nonzero(diff)


def all_triplets(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All (anchor, positive, negative) index triples valid under the labels."""
    a_idx, p_idx = ordered_positive_pairs(labels)
    anchors, positives, negatives = [], [], []
    diff = labels[:, None] != labels[None, :]
    for a, p in zip(a_idx, p_idx):
        negs = np.flatnonzero(diff[a])
        anchors.append(np.full(negs.size, a))
        positives.append(np.full(negs.size, p))
        negatives.append(negs)
    if not anchors:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    return (np.concatenate(anchors), np.concatenate(positives), np.concatenate(negatives))


def euclidean_matrix(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def accumulate_euclidean_grad(
    grad: np.ndarray,
    x: np.ndarray,
    dist: np.ndarray,
    i_idx: np.ndarray,
    j_idx: np.ndarray,
    weights: np.ndarray,
) -> None:
    """grad[i] += w * d(d_ij)/d(x_i) and grad[j] += w * d(d_ij)/d(x_j).

    Coincident points (d == 0) contribute the zero subgradient.
    """
    d = dist[i_idx, j_idx]
    safe = np.where(d > 0.0, d, 1.0)
    coeff = np.where(d > 0.0, weights / safe, 0.0)
    delta = (x[i_idx] - x[j_idx]) * coeff[:, None]
    np.add.at(grad, i_idx, delta)
    np.add.at(grad, j_idx, -delta)


def cosine_matrix(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cosine similarities and the row norms used to compute them."""
    norms = np.linalg.norm(x, axis=1)
    sims = (x @ x.T) / (norms[:, None] * norms[None, :])
    return sims, norms


def accumulate_cosine_grad(
    grad: np.ndarray,
    x: np.ndarray,
    sims: np.ndarray,
    norms: np.ndarray,
    i_idx: np.ndarray,
    j_idx: np.ndarray,
    weights: np.ndarray,
) -> None:
    """grad[i] += w * d(s_ij)/d(x_i) and grad[j] += w * d(s_ij)/d(x_j)."""
    xi = x[i_idx]
    xj = x[j_idx]
    ni = norms[i_idx][:, None]
    nj = norms[j_idx][:, None]
    s = sims[i_idx, j_idx][:, None]
    w = weights[:, None]
    np.add.at(grad, i_idx, w * (xj / nj - s * xi / ni) / ni)
    np.add.at(grad, j_idx, w * (xi / ni - s * xj / nj) / nj)


def stable_log1p_sum_exp(t: np.ndarray) -> tuple[float, np.ndarray]:
    """log(1 + sum(exp(t))) with max-subtraction; also the d/dt weights."""
    if t.size == 0:
        return 0.0, t
    m = max(float(t.max()), 0.0)
    z = np.exp(t - m)
    total = np.exp(-m) + z.sum()
    return m + np.log(total), z / total


def softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
