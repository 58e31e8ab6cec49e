"""FastAP: 1 - soft average precision, via triangular soft histogram binning.

Euclidean distances of unit-norm embeddings live in [0, 2]; that range is
covered by ``num_bins`` triangular kernels with centers j * delta,
delta = 2 / (num_bins - 1). Per anchor, positives and negatives are softly
counted into the bins, and average precision is computed from the cumulative
soft counts. Anchors without a positive are skipped.
"""

from __future__ import annotations

import numpy as np

from ..errors import NoPositives
from .common import LossOutput, accumulate_euclidean_grad, euclidean_matrix


def _bin_centers(num_bins: int) -> tuple[np.ndarray, float]:
    if num_bins < 2:
        raise ValueError(f"num_bins must be >= 2, got {num_bins}")
    delta = 2.0 / (num_bins - 1)
    return np.arange(num_bins) * delta, delta


def soft_histogram(distances: np.ndarray, num_bins: int) -> np.ndarray:
    """Rows of triangular-kernel bin memberships; each row sums to 1 on [0, 2]."""
    centers, delta = _bin_centers(num_bins)
    return np.maximum(0.0, 1.0 - np.abs(distances[:, None] - centers[None, :]) / delta)


def _soft_histogram_deriv(distances: np.ndarray, num_bins: int) -> np.ndarray:
    centers, delta = _bin_centers(num_bins)
    offset = distances[:, None] - centers[None, :]
    inside = np.abs(offset) < delta
    return np.where(inside, -np.sign(offset) / delta, 0.0)


def fastap(x, labels, num_bins: int = 10) -> LossOutput:
    b = x.shape[0]
    dist = euclidean_matrix(x)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    anchors = np.flatnonzero(same.any(axis=1))
    if anchors.size == 0:
        raise NoPositives("no anchor has a positive in this batch")
    grad = np.zeros_like(x)
    total = 0.0
    for a in anchors:
        others = np.concatenate([np.arange(a), np.arange(a + 1, b)])
        d = dist[a, others]
        pos = same[a, others]
        n_pos = int(pos.sum())
        delta_m = soft_histogram(d, num_bins)
        h_pos = delta_m[pos].sum(axis=0)
        h_all = delta_m.sum(axis=0)
        hp = np.cumsum(h_pos)
        ht = np.cumsum(h_all)
        ok = ht > 0.0
        ratio = np.where(ok, hp / np.where(ok, ht, 1.0), 0.0)
        ap = float((h_pos * ratio).sum()) / n_pos
        total += 1.0 - ap
        # d(AP)/dh via suffix sums over the cumulative terms
        inv_ht2 = np.where(ok, 1.0 / np.where(ok, ht, 1.0) ** 2, 0.0)
        a_term = h_pos * (ht - hp) * inv_ht2
        b_term = h_pos * hp * inv_ht2
        suf_a = np.cumsum(a_term[::-1])[::-1]
        suf_b = np.cumsum(b_term[::-1])[::-1]
        dap_dhpos = (ratio + suf_a) / n_pos
        dap_dhneg = -suf_b / n_pos
        dh = np.where(pos[:, None], dap_dhpos[None, :], dap_dhneg[None, :])
        ddist = -(_soft_histogram_deriv(d, num_bins) * dh).sum(axis=1) / anchors.size
        accumulate_euclidean_grad(grad, x, dist, np.full(others.size, a), others, ddist)
    value = total / anchors.size
    return LossOutput(float(value), grad, {}, int(anchors.size))


def fastap_slack(x, labels, num_bins: int = 10) -> float:
    """Distance of every pairwise distance to the nearest bin-grid kink."""
    centers, _ = _bin_centers(num_bins)
    dist = euclidean_matrix(x)
    iu = np.triu_indices(x.shape[0], k=1)
    d = dist[iu]
    if d.size == 0:
        return np.inf
    return float(np.abs(d[:, None] - centers[None, :]).min())
