"""Pair- and triplet-based embedding losses with analytic gradients.

Canonical formulas (the cited papers are followed where they give one;
remaining choices are pinned here):

* contrastive: mean_P [d_p - m_pos]+ + mean_N [m_neg - d_n]+ over unordered
  in-batch pairs, Euclidean distances.
* triplet: mean_T [d_ap - d_an + m]+ over all in-batch triplets.
* ntxent: per ordered positive pair (a, p),
  -log( exp(s_ap / t) / (exp(s_ap / t) + sum_{n in N(a)} exp(s_an / t)) ).
* multisimilarity: per anchor,
  (1/alpha) log(1 + sum_P exp(-alpha (s_ap - lam)))
  + (1/beta) log(1 + sum_N exp(beta (s_an - lam))).
* snr: contrastive hinges on the variance ratio var(a - x) / var(a), ordered
  pairs with the anchor first, plus a mean-regularizer
  reg * mean_i |mean_k x_ik|.
* margin: contrastive with m_pos = beta - alpha and m_neg = beta + alpha,
  beta learnable (one global value, or one per training class keyed by the
  anchor's class), ordered pairs with the anchor first.

Hinge subgradients at the kink are 0. All softmax-style terms are computed
with max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoPairs, NoTriplets, UnknownClass
from .common import (
    LossOutput,
    accumulate_cosine_grad,
    accumulate_euclidean_grad,
    all_triplets,
    cosine_matrix,
    euclidean_matrix,
    ordered_negative_pairs,
    ordered_positive_pairs,
    stable_log1p_sum_exp,
    unordered_negative_pairs,
    unordered_positive_pairs,
)


@dataclass
class MarginState:
    """Learnable beta of the margin loss: scalar, or one value per class."""

    beta: np.ndarray
    classes: np.ndarray | None = None

    def learnables(self) -> dict[str, np.ndarray]:
        return {"beta": self.beta}

    def copy(self) -> "MarginState":
        return MarginState(self.beta.copy(),
                           None if self.classes is None else self.classes.copy())


def make_margin_state(beta_init: float, classes=None) -> MarginState:
    if classes is None:
        return MarginState(np.asarray(float(beta_init)))
    classes = np.asarray(sorted(set(int(c) for c in classes)), dtype=np.int64)
    return MarginState(np.full(classes.size, float(beta_init)), classes)


def _pair_sets(labels, mined=None, ordered=False):
    if mined is not None:
        return (np.asarray(mined.pos_anchor), np.asarray(mined.pos_other),
                np.asarray(mined.neg_anchor), np.asarray(mined.neg_other))
    if ordered:
        pa, pp = ordered_positive_pairs(labels)
        na, nn = ordered_negative_pairs(labels)
    else:
        pa, pp = unordered_positive_pairs(labels)
        na, nn = unordered_negative_pairs(labels)
    return pa, pp, na, nn


def contrastive(x, labels, pos_margin=0.0, neg_margin=0.5, mined=None) -> LossOutput:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=False)
    if pa.size == 0 and na.size == 0:
        raise NoPairs("batch has no pairs")
    dist = euclidean_matrix(x)
    grad = np.zeros_like(x)
    value = 0.0
    n_active = 0
    if pa.size:
        viol = dist[pa, pp] - pos_margin
        active = viol > 0.0
        value += float(viol[active].sum()) / pa.size
        n_active += int(active.sum())
        w = np.where(active, 1.0 / pa.size, 0.0)
        accumulate_euclidean_grad(grad, x, dist, pa, pp, w)
    if na.size:
        viol = neg_margin - dist[na, nn]
        active = viol > 0.0
        value += float(viol[active].sum()) / na.size
        n_active += int(active.sum())
        w = np.where(active, -1.0 / na.size, 0.0)
        accumulate_euclidean_grad(grad, x, dist, na, nn, w)
    return LossOutput(value, grad, {}, n_active)


def contrastive_slack(x, labels, pos_margin=0.0, neg_margin=0.5, mined=None) -> float:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=False)
    dist = euclidean_matrix(x)
    slacks = [np.inf]
    if pa.size:
        slacks.append(float(np.abs(dist[pa, pp] - pos_margin).min()))
        slacks.append(float(dist[pa, pp].min()))
    if na.size:
        slacks.append(float(np.abs(dist[na, nn] - neg_margin).min()))
        slacks.append(float(dist[na, nn].min()))
    return min(slacks)


def triplet_margin(x, labels, margin=0.1, mined=None) -> LossOutput:
    if mined is not None:
        a_idx = np.asarray(mined.anchor)
        p_idx = np.asarray(mined.positive)
        n_idx = np.asarray(mined.negative)
    else:
        a_idx, p_idx, n_idx = all_triplets(labels)
    if a_idx.size == 0:
        raise NoTriplets("batch has no valid triplets")
    dist = euclidean_matrix(x)
    viol = dist[a_idx, p_idx] - dist[a_idx, n_idx] + margin
    active = viol > 0.0
    value = float(viol[active].sum()) / a_idx.size
    grad = np.zeros_like(x)
    w = np.where(active, 1.0 / a_idx.size, 0.0)
    accumulate_euclidean_grad(grad, x, dist, a_idx, p_idx, w)
    accumulate_euclidean_grad(grad, x, dist, a_idx, n_idx, -w)
    return LossOutput(value, grad, {}, int(active.sum()))


def triplet_slack(x, labels, margin=0.1, mined=None) -> float:
    if mined is not None:
        a_idx = np.asarray(mined.anchor)
        p_idx = np.asarray(mined.positive)
        n_idx = np.asarray(mined.negative)
    else:
        a_idx, p_idx, n_idx = all_triplets(labels)
    if a_idx.size == 0:
        return np.inf
    dist = euclidean_matrix(x)
    hinge = np.abs(dist[a_idx, p_idx] - dist[a_idx, n_idx] + margin)
    return float(min(hinge.min(), dist[a_idx, p_idx].min(), dist[a_idx, n_idx].min()))


def ntxent(x, labels, temperature=0.1, mined=None) -> LossOutput:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    if pa.size == 0:
        raise NoPairs("ntxent needs at least one positive pair")
    sims, norms = cosine_matrix(x)
    grad = np.zeros_like(x)
    b = x.shape[0]
    neg_lists = [nn[na == a] for a in range(b)]
    total = 0.0
    acc_i, acc_j, acc_w = [], [], []
    n_pairs = pa.size
    for a, p in zip(pa, pp):
        negs = neg_lists[a]
        z_p = sims[a, p] / temperature
        z_n = sims[a, negs] / temperature
        m = max(z_p, float(z_n.max()) if z_n.size else z_p)
        e_p = np.exp(z_p - m)
        e_n = np.exp(z_n - m)
        denom = e_p + e_n.sum()
        total += -z_p + m + np.log(denom)
        # d(loss)/d(s): softmax weights minus the positive indicator
        acc_i.append(np.array([a]))
        acc_j.append(np.array([p]))
        acc_w.append(np.array([(e_p / denom - 1.0) / temperature / n_pairs]))
        if negs.size:
            acc_i.append(np.full(negs.size, a))
            acc_j.append(negs)
            acc_w.append((e_n / denom) / temperature / n_pairs)
    value = total / n_pairs
    accumulate_cosine_grad(grad, x, sims, norms,
                           np.concatenate(acc_i), np.concatenate(acc_j),
                           np.concatenate(acc_w))
    return LossOutput(float(value), grad, {}, int(n_pairs))


def multisimilarity(x, labels, alpha=2.0, beta=50.0, base=0.5, mined=None) -> LossOutput:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    if pa.size == 0 and na.size == 0:
        raise NoPairs("batch has no pairs")
    sims, norms = cosine_matrix(x)
    grad = np.zeros_like(x)
    b = x.shape[0]
    value = 0.0
    n_active = 0
    acc_i, acc_j, acc_w = [], [], []
    for a in range(b):
        pos = pp[pa == a]
        neg = nn[na == a]
        if pos.size:
            t = -alpha * (sims[a, pos] - base)
            lse, w = stable_log1p_sum_exp(t)
            value += lse / alpha / b
            if lse > 0.0:
                n_active += 1
            acc_i.append(np.full(pos.size, a))
            acc_j.append(pos)
            acc_w.append(-w / b)
        if neg.size:
            t = beta * (sims[a, neg] - base)
            lse, w = stable_log1p_sum_exp(t)
            value += lse / beta / b
            if lse > 0.0:
                n_active += 1
            acc_i.append(np.full(neg.size, a))
            acc_j.append(neg)
            acc_w.append(w / b)
    if acc_i:
        accumulate_cosine_grad(grad, x, sims, norms,
                               np.concatenate(acc_i), np.concatenate(acc_j),
                               np.concatenate(acc_w))
    return LossOutput(float(value), grad, {}, n_active)


def _snr_distances(x, a_idx, o_idx):
    """Variance ratio var(a - x) / var(a) per ordered pair."""
    d = x.shape[1]
    diff = x[a_idx] - x[o_idx]
    var_diff = diff.var(axis=1)
    var_anchor = x[a_idx].var(axis=1)
    return var_diff / var_anchor, diff, var_diff, var_anchor


def _accumulate_snr_grad(grad, x, a_idx, o_idx, diff, var_diff, var_anchor, weights):
    d = x.shape[1]
    u_center = diff - diff.mean(axis=1, keepdims=True)
    a_center = x[a_idx] - x[a_idx].mean(axis=1, keepdims=True)
    w = weights[:, None]
    d_u = (2.0 / d) * u_center / var_anchor[:, None]
    d_a = -(2.0 / d) * a_center * (var_diff / var_anchor ** 2)[:, None]
    np.add.at(grad, a_idx, w * (d_u + d_a))
    np.add.at(grad, o_idx, -w * d_u)


def snr_contrastive(x, labels, pos_margin=0.0, neg_margin=0.5, reg_weight=0.1,
                    mined=None) -> LossOutput:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    if pa.size == 0 and na.size == 0:
        raise NoPairs("batch has no pairs")
    b, d = x.shape
    grad = np.zeros_like(x)
    value = 0.0
    n_active = 0
    if pa.size:
        q, diff, vd, va = _snr_distances(x, pa, pp)
        viol = q - pos_margin
        active = viol > 0.0
        value += float(viol[active].sum()) / pa.size
        n_active += int(active.sum())
        w = np.where(active, 1.0 / pa.size, 0.0)
        _accumulate_snr_grad(grad, x, pa, pp, diff, vd, va, w)
    if na.size:
        q, diff, vd, va = _snr_distances(x, na, nn)
        viol = neg_margin - q
        active = viol > 0.0
        value += float(viol[active].sum()) / na.size
        n_active += int(active.sum())
        w = np.where(active, -1.0 / na.size, 0.0)
        _accumulate_snr_grad(grad, x, na, nn, diff, vd, va, w)
    if reg_weight > 0.0:
        means = x.mean(axis=1)
        value += reg_weight * float(np.abs(means).sum()) / b
        grad += (reg_weight / (b * d)) * np.sign(means)[:, None]
    return LossOutput(float(value), grad, {}, n_active)


def snr_slack(x, labels, pos_margin=0.0, neg_margin=0.5, reg_weight=0.1, mined=None) -> float:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    d = x.shape[1]
    slacks = [np.inf]
    if pa.size:
        q, *_ = _snr_distances(x, pa, pp)
        slacks.append(float(np.abs(q - pos_margin).min()))
    if na.size:
        q, *_ = _snr_distances(x, na, nn)
        slacks.append(float(np.abs(q - neg_margin).min()))
    if reg_weight > 0.0:
        slacks.append(float(np.abs(x.mean(axis=1)).min()) * d)
    slacks.append(float(x.var(axis=1).min()))
    return min(slacks)


def _beta_for(labels, state: MarginState):
    if state.classes is None:
        return np.broadcast_to(state.beta, labels.shape), None
    idx = np.searchsorted(state.classes, labels)
    bad = (idx >= state.classes.size) | (state.classes[np.minimum(idx, state.classes.size - 1)] != labels)
    if np.any(bad):
        missing = labels[bad][0]
        raise UnknownClass(f"class {int(missing)} has no learnable beta")
    return state.beta[idx], idx


def margin_loss(x, labels, state: MarginState, alpha=0.2, mined=None) -> LossOutput:
    """Margin loss of Wu et al.: hinges at beta -/+ alpha with learnable beta."""
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    if pa.size == 0 and na.size == 0:
        raise NoPairs("batch has no pairs")
    dist = euclidean_matrix(x)
    grad = np.zeros_like(x)
    grad_beta = np.zeros_like(state.beta, dtype=np.float64)
    value = 0.0
    n_active = 0
    if pa.size:
        beta_a, b_idx = _beta_for(labels[pa], state)
        viol = dist[pa, pp] - (beta_a - alpha)
        active = viol > 0.0
        value += float(viol[active].sum()) / pa.size
        n_active += int(active.sum())
        w = np.where(active, 1.0 / pa.size, 0.0)
        accumulate_euclidean_grad(grad, x, dist, pa, pp, w)
        if state.classes is None:
            grad_beta -= w.sum()
        else:
            np.add.at(grad_beta, b_idx, -w)
    if na.size:
        beta_a, b_idx = _beta_for(labels[na], state)
        viol = (beta_a + alpha) - dist[na, nn]
        active = viol > 0.0
        value += float(viol[active].sum()) / na.size
        n_active += int(active.sum())
        w = np.where(active, 1.0 / na.size, 0.0)
        accumulate_euclidean_grad(grad, x, dist, na, nn, -w)
        if state.classes is None:
            grad_beta += w.sum()
        else:
            np.add.at(grad_beta, b_idx, w)
    return LossOutput(float(value), grad, {"beta": grad_beta}, n_active)


def margin_slack(x, labels, state: MarginState, alpha=0.2, mined=None) -> float:
    pa, pp, na, nn = _pair_sets(labels, mined, ordered=True)
    dist = euclidean_matrix(x)
    slacks = [np.inf]
    if pa.size:
        beta_a, _ = _beta_for(labels[pa], state)
        slacks.append(float(np.abs(dist[pa, pp] - (beta_a - alpha)).min()))
        slacks.append(float(dist[pa, pp].min()))
    if na.size:
        beta_a, _ = _beta_for(labels[na], state)
        slacks.append(float(np.abs((beta_a + alpha) - dist[na, nn]).min()))
        slacks.append(float(dist[na, nn].min()))
    return min(slacks)
