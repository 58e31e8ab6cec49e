"""Batch construction and online pair/triplet mining.

Miner registry ids: none, multisimilarity, semihard, distance_weighted.
Pair miners feed pair-based losses; triplet miners feed the triplet loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedcore import LabelSet
from .errors import NoNegatives, TooFewClasses, UnknownKind
from .losses.common import (
    Batch,
    all_triplets,
    cosine_matrix,
    euclidean_matrix,
    ordered_positive_pairs,
)

MINER_IDS = ("none", "multisimilarity", "semihard", "distance_weighted")


@dataclass(frozen=True)
class BatchSpec:
    """C classes per batch, M samples per class."""

    classes_per_batch: int
    samples_per_class: int

    def __post_init__(self):
        if self.classes_per_batch < 2:
            raise ValueError("need at least 2 classes per batch")
        if self.samples_per_class < 1:
            raise ValueError("need at least 1 sample per class")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class


@dataclass(frozen=True)
class MinedPairs:
    pos_anchor: np.ndarray
    pos_other: np.ndarray
    neg_anchor: np.ndarray
    neg_other: np.ndarray

    @property
    def n_pos(self) -> int:
        return self.pos_anchor.shape[0]

    @property
    def n_neg(self) -> int:
        return self.neg_anchor.shape[0]


@dataclass(frozen=True)
class MinedTriplets:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __len__(self) -> int:
        return self.anchor.shape[0]


def sample_batch(labels: LabelSet, spec: BatchSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw C distinct classes, then M samples from each.

    Classes holding fewer than M samples are sampled with replacement.
    Deterministic given the generator state.
    """
    classes = labels.classes
    if classes.size < spec.classes_per_batch:
        raise TooFewClasses(
            f"batch wants {spec.classes_per_batch} classes, dataset has {classes.size}")
    chosen = rng.choice(classes.size, size=spec.classes_per_batch, replace=False)
    out = []
    for c in chosen:
        members = np.flatnonzero(labels.canonical == c)
        replace = members.size < spec.samples_per_class
        picks = rng.choice(members.size, size=spec.samples_per_class, replace=replace)
        out.append(members[picks])
    return np.concatenate(out)


def multisimilarity_miner(batch: Batch, epsilon: float = 0.1) -> MinedPairs:
    """Keep pairs that violate the hardest-counterpart thresholds.

    Per anchor (needs both a positive and a negative): a negative survives if
    its similarity exceeds the hardest positive's minus epsilon, a positive
    survives if its similarity is below the hardest negative's plus epsilon.
    """
    sims, _ = cosine_matrix(batch.embeddings)
    labels = batch.labels
    b = batch.size
    pa, po, na, no = [], [], [], []
    for a in range(b):
        same = labels == labels[a]
        same[a] = False
        pos = np.flatnonzero(same)
        neg = np.flatnonzero(labels != labels[a])
        if pos.size == 0 or neg.size == 0:
            continue
        hardest_pos = sims[a, pos].min()
        hardest_neg = sims[a, neg].max()
        keep_neg = neg[sims[a, neg] > hardest_pos - epsilon]
        keep_pos = pos[sims[a, pos] < hardest_neg + epsilon]
        pa.append(np.full(keep_pos.size, a))
        po.append(keep_pos)
        na.append(np.full(keep_neg.size, a))
        no.append(keep_neg)
    empty = np.empty(0, dtype=np.int64)
    return MinedPairs(
        np.concatenate(pa) if pa else empty,
        np.concatenate(po) if po else empty.copy(),
        np.concatenate(na) if na else empty.copy(),
        np.concatenate(no) if no else empty.copy(),
    )


def semihard_triplet_miner(batch: Batch, margin: float = 0.1) -> MinedTriplets:
    """Triplets with d_ap < d_an < d_ap + margin."""
    a_idx, p_idx, n_idx = all_triplets(batch.labels)
    dist = euclidean_matrix(batch.embeddings)
    d_ap = dist[a_idx, p_idx]
    d_an = dist[a_idx, n_idx]
    keep = (d_ap < d_an) & (d_an < d_ap + margin)
    return MinedTriplets(a_idx[keep], p_idx[keep], n_idx[keep])


def uniform_sphere_log_density(d: np.ndarray, dim: int) -> np.ndarray:
    """log q(d) for the distance d between uniform points on the unit sphere,
    q(d) proportional to d^(dim-2) * (1 - d^2/4)^((dim-3)/2)."""
    d = np.clip(d, 1e-12, 2.0 - 1e-12)
    return (dim - 2) * np.log(d) + 0.5 * (dim - 3) * np.log1p(-d * d / 4.0)


def distance_weighted_sampler(
    batch: Batch,
    embedding_dim: int | None = None,
    clamp_min: float = 0.5,
    rng: np.random.Generator | None = None,
) -> MinedTriplets:
    """One negative per anchor-positive pair, drawn inversely to the
    uniform-hypersphere distance density. Distances are clamped below at
    clamp_min so near-duplicate negatives cannot dominate the weights.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    dim = embedding_dim if embedding_dim is not None else batch.dim
    labels = batch.labels
    if np.unique(labels).size < 2:
        raise NoNegatives("distance-weighted sampling needs at least 2 classes")
    a_idx, p_idx = ordered_positive_pairs(labels)
    dist = euclidean_matrix(batch.embeddings)
    anchors, positives, negatives = [], [], []
    for a, p in zip(a_idx, p_idx):
        negs = np.flatnonzero(labels != labels[a])
        if negs.size == 0:
            continue
        d = np.maximum(dist[a, negs], clamp_min)
        log_w = -uniform_sphere_log_density(d, dim)
        log_w -= log_w.max()
        w = np.exp(log_w)
        w /= w.sum()
        pick = int(np.searchsorted(np.cumsum(w), rng.random(), side="right"))
        pick = min(pick, negs.size - 1)
        anchors.append(a)
        positives.append(p)
        negatives.append(negs[pick])
    if not anchors:
        raise NoNegatives("no anchor-positive pair has negatives")
    return MinedTriplets(np.asarray(anchors), np.asarray(positives), np.asarray(negatives))


def mine(miner_id: str, batch: Batch, params: dict | None = None,
         rng: np.random.Generator | None = None):
    """Registry dispatch; returns MinedPairs, MinedTriplets, or None for 'none'."""
    params = params or {}
    if miner_id == "none":
        return None
    if miner_id == "multisimilarity":
        return multisimilarity_miner(batch, epsilon=params.get("epsilon", 0.1))
    if miner_id == "semihard":
        return semihard_triplet_miner(batch, margin=params.get("margin", 0.1))
    if miner_id == "distance_weighted":
        return distance_weighted_sampler(
            batch,
            embedding_dim=params.get("embedding_dim"),
            clamp_min=params.get("clamp_min", 0.5),
            rng=rng,
        )
    raise UnknownKind(f"unknown miner {miner_id!r}")


def miner_output_kind(miner_id: str) -> str:
    """'pairs', 'triplets', or 'none' for a registry id."""
    if miner_id == "none":
        return "none"
    if miner_id == "multisimilarity":
        return "pairs"
    if miner_id in ("semihard", "distance_weighted"):
        return "triplets"
    raise UnknownKind(f"unknown miner {miner_id!r}")
