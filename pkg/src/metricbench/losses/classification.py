"""Classification losses: cross-entropy over logits built from a per-class
weight matrix.

Logit constructions (s = scale, m = margin, all angles from cosine
similarity between the embedding and a unit-normalized weight column):

* normalized_softmax: s * cos(theta_c)
* cosface:            s * (cos(theta_y) - m) for the target, s * cos otherwise
* arcface:            s * cos(theta_y + m), theta clamped to [0, pi - m]
* proxynca:           -s * ||x - w_c_hat||^2 (cross entropy on Euclidean
                      distances to normalized proxies)
* softtriple:         s * (h_c - m * 1{c = y}) where h_c is the per-class
                      smoothed max over that class's centers,
                      h_c = sum_k softmax_k(cos_ck / gamma) * cos_ck

Weight columns are normalized inside the loss, so gradients flow through the
column-normalization Jacobian and the stored matrix may have any column
norms. grad_params carries d(loss)/d(matrix) under key "weights".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnknownClass, UnknownKind
from .common import LossOutput, log_softmax_rows, softmax_rows

COSINE_CLIP = 1e-7


@dataclass
class ClassWeights:
    """Weight matrix with ``centers_per_class`` columns per class.

    Columns for class ``classes[i]`` live at
    ``[i * centers_per_class, (i + 1) * centers_per_class)``.
    """

    matrix: np.ndarray
    classes: np.ndarray
    centers_per_class: int = 1

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        expected = self.classes.size * self.centers_per_class
        if self.matrix.ndim != 2 or self.matrix.shape[1] != expected:
            raise ValueError(
                f"weight matrix must be (d, {expected}), got {self.matrix.shape}")

    @property
    def num_classes(self) -> int:
        return self.classes.size

    def class_index(self, labels: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.classes, labels)
        clipped = np.minimum(idx, self.classes.size - 1)
        bad = self.classes[clipped] != labels
        if np.any(bad):
            missing = np.asarray(labels)[bad][0]
            raise UnknownClass(f"class {int(missing)} has no weight column")
        return idx

    def learnables(self) -> dict[str, np.ndarray]:
        return {"weights": self.matrix}

    def copy(self) -> "ClassWeights":
        return ClassWeights(self.matrix.copy(), self.classes.copy(), self.centers_per_class)

    def renormalize_columns(self) -> None:
        norms = np.linalg.norm(self.matrix, axis=0)
        norms[norms == 0.0] = 1.0
        self.matrix /= norms


def make_class_weights(classes, dim: int, rng: np.random.Generator,
                       centers_per_class: int = 1) -> ClassWeights:
    classes = np.asarray(sorted(set(int(c) for c in classes)), dtype=np.int64)
    mat = rng.standard_normal((dim, classes.size * centers_per_class))
    mat /= np.linalg.norm(mat, axis=0)
    return ClassWeights(mat, classes, centers_per_class)


def _normalize_cols(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(w, axis=0)
    return w / norms, norms


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    return x / norms[:, None], norms


def _col_grad_through_norm(d_what: np.ndarray, w_hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Map d(loss)/d(w_hat) to d(loss)/d(w) through column normalization."""
    proj = np.einsum("ij,ij->j", d_what, w_hat)
    return (d_what - w_hat * proj[None, :]) / norms[None, :]


def _row_grad_through_norm(d_xhat: np.ndarray, x_hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    proj = np.einsum("ij,ij->i", d_xhat, x_hat)
    return (d_xhat - x_hat * proj[:, None]) / norms[:, None]


def _cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy and d(loss)/d(logits)."""
    b = logits.shape[0]
    logp = log_softmax_rows(logits)
    value = float(-logp[np.arange(b), targets].mean())
    dz = softmax_rows(logits)
    dz[np.arange(b), targets] -= 1.0
    return value, dz / b


def classification_core(kind: str, x: np.ndarray, labels: np.ndarray,
                        weights: ClassWeights, scale: float = 32.0,
                        margin: float = 0.0, gamma: float = 0.1) -> LossOutput:
    if kind == "softtriple":
        return _softtriple(x, labels, weights, scale, margin, gamma)
    if kind == "proxynca":
        return _proxynca(x, labels, weights, scale)
    if kind not in ("normalized_softmax", "cosface", "arcface"):
        raise UnknownKind(f"unknown classification loss {kind!r}")
    if weights.centers_per_class != 1:
        raise ValueError(f"{kind} expects one center per class")
    targets = weights.class_index(labels)
    x_hat, x_norms = _normalize_rows(x)
    w_hat, w_norms = _normalize_cols(weights.matrix)
    cos = x_hat @ w_hat
    b = x.shape[0]
    rows = np.arange(b)
    logits = scale * cos
    target_chain = np.ones(b)
    if kind == "cosface":
        logits[rows, targets] = scale * (cos[rows, targets] - margin)
    elif kind == "arcface":
        c = np.clip(cos[rows, targets], -1.0 + COSINE_CLIP, 1.0 - COSINE_CLIP)
        theta = np.arccos(c)
        clamped = theta > np.pi - margin
        theta_c = np.where(clamped, np.pi - margin, theta)
        logits[rows, targets] = scale * np.cos(theta_c + margin)
        # d cos(theta + m) / d cos(theta); zero where the clamp is active
        target_chain = np.where(clamped, 0.0, np.sin(theta_c + margin) / np.sin(theta))
    value, dz = _cross_entropy(logits, targets)
    dcos = dz * scale
    dcos[rows, targets] *= target_chain
    d_xhat = dcos @ w_hat.T
    d_what = x_hat.T @ dcos
    grad_x = _row_grad_through_norm(d_xhat, x_hat, x_norms)
    grad_w = _col_grad_through_norm(d_what, w_hat, w_norms)
    return LossOutput(value, grad_x, {"weights": grad_w}, b)


def _proxynca(x, labels, weights: ClassWeights, scale: float) -> LossOutput:
    if weights.centers_per_class != 1:
        raise ValueError("proxynca expects one proxy per class")
    targets = weights.class_index(labels)
    w_hat, w_norms = _normalize_cols(weights.matrix)
    # squared Euclidean distance to each normalized proxy
    x_sq = np.einsum("ij,ij->i", x, x)
    d2 = x_sq[:, None] + 1.0 - 2.0 * (x @ w_hat)
    logits = -scale * d2
    value, dz = _cross_entropy(logits, targets)
    coeff = -scale * dz
    grad_x = 2.0 * (coeff.sum(axis=1)[:, None] * x - coeff @ w_hat.T)
    d_what = 2.0 * (w_hat * coeff.sum(axis=0)[None, :] - x.T @ coeff)
    grad_w = _col_grad_through_norm(d_what, w_hat, w_norms)
    return LossOutput(value, grad_x, {"weights": grad_w}, x.shape[0])


def _softtriple(x, labels, weights: ClassWeights, scale: float,
                margin: float, gamma: float) -> LossOutput:
    k = weights.centers_per_class
    n_cls = weights.num_classes
    targets = weights.class_index(labels)
    x_hat, x_norms = _normalize_rows(x)
    w_hat, w_norms = _normalize_cols(weights.matrix)
    b = x.shape[0]
    sim = (x_hat @ w_hat).reshape(b, n_cls, k)
    # smoothed max over each class's centers
    shifted = sim / gamma
    shifted -= shifted.max(axis=2, keepdims=True)
    sm = np.exp(shifted)
    sm /= sm.sum(axis=2, keepdims=True)
    h = np.einsum("bck,bck->bc", sm, sim)
    rows = np.arange(b)
    logits = scale * h
    logits[rows, targets] -= scale * margin
    value, dz = _cross_entropy(logits, targets)
    dh = dz * scale
    dsim = sm * (1.0 + (sim - h[:, :, None]) / gamma) * dh[:, :, None]
    dsim = dsim.reshape(b, n_cls * k)
    d_xhat = dsim @ w_hat.T
    d_what = x_hat.T @ dsim
    grad_x = _row_grad_through_norm(d_xhat, x_hat, x_norms)
    grad_w = _col_grad_through_norm(d_what, w_hat, w_norms)
    return LossOutput(value, grad_x, {"weights": grad_w}, b)


def classification_slack(kind: str, x: np.ndarray, labels: np.ndarray,
                         weights: ClassWeights, margin: float = 0.0) -> float:
    """Distance to the nearest non-smooth point; +inf for smooth losses."""
    if kind != "arcface":
        return np.inf
    targets = weights.class_index(labels)
    x_hat, _ = _normalize_rows(x)
    w_hat, _ = _normalize_cols(weights.matrix)
    cos = np.einsum("ij,ji->i", x_hat, w_hat[:, targets])
    boundary = np.cos(np.pi - margin)
    return float(min(np.abs(cos - boundary).min(), (1.0 - np.abs(cos)).min()))
