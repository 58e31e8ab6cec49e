"""Loss zoo: registry, public loss operations, and the gradient checker.

Losses are addressed by string id: contrastive, triplet, ntxent, proxynca,
margin, margin_per_class, normalized_softmax, cosface, arcface, fastap, snr,
multisimilarity, softtriple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UnknownKind
from .common import Batch, LossOutput
from .classification import (
    ClassWeights,
    classification_core,
    classification_slack,
    make_class_weights,
)
from .fastap import fastap, fastap_slack
from .pairwise import (
    MarginState,
    contrastive,
    contrastive_slack,
    make_margin_state,
    margin_loss,
    margin_slack,
    multisimilarity,
    ntxent,
    snr_contrastive,
    snr_slack,
    triplet_margin,
    triplet_slack,
)

__all__ = [
    "Batch", "LossOutput", "ClassWeights", "MarginState", "LossInfo",
    "LOSS_REGISTRY", "loss_ids", "resolve_params", "make_state",
    "evaluate_loss", "kink_slack", "contrastive_loss", "triplet_margin_loss",
    "pair_weighting_loss", "classification_loss", "fastap_loss",
    "gradient_check", "random_batch", "sample_non_kink_batch",
    "make_class_weights", "make_margin_state",
]

# keys consumed by the trainer / state factory, not by the loss math
STRUCTURAL_KEYS = ("param_lr", "centers_per_class")

# value constraints per parameter name: positive, nonneg, or int bounds
_PARAM_RULES = {
    "pos_margin": "nonneg",
    "neg_margin": "nonneg",
    "margin": "nonneg",
    "temperature": "positive",
    "scale": "positive",
    "alpha": "positive",
    "beta": "positive",
    "base": "any",
    "beta_init": "positive",
    "reg_weight": "nonneg",
    "gamma": "positive",
    "param_lr": "positive",
    "num_bins": "int_ge2",
    "centers_per_class": "int_ge1",
}
# the margin loss's alpha is a half-width and may be zero
_LOSS_RULE_OVERRIDES = {
    "margin": {"alpha": "nonneg"},
    "margin_per_class": {"alpha": "nonneg"},
}


def _check_param(loss_id: str, key: str, value) -> None:
    rule = _LOSS_RULE_OVERRIDES.get(loss_id, {}).get(key, _PARAM_RULES.get(key, "any"))
    if rule == "any":
        return
    if rule == "positive" and not value > 0:
        raise ValueError(f"{loss_id}.{key} must be > 0, got {value}")
    if rule == "nonneg" and not value >= 0:
        raise ValueError(f"{loss_id}.{key} must be >= 0, got {value}")
    if rule == "int_ge2" and (int(value) != value or value < 2):
        raise ValueError(f"{loss_id}.{key} must be an integer >= 2, got {value}")
    if rule == "int_ge1" and (int(value) != value or value < 1):
        raise ValueError(f"{loss_id}.{key} must be an integer >= 1, got {value}")


@dataclass(frozen=True)
class LossInfo:
    loss_id: str
    family: str  # pair | triplet | classification | fastap
    needs_state: bool
    default_params: dict = field(default_factory=dict)
    default_batch: tuple[int, int] = (8, 4)  # (classes per batch, samples per class)
    search_space: dict = field(default_factory=dict)


LOSS_REGISTRY: dict[str, LossInfo] = {
    "contrastive": LossInfo(
        "contrastive", "pair", False,
        {"pos_margin": 0.0, "neg_margin": 0.5},
        (8, 4),
        {"neg_margin": {"lo": 0.05, "hi": 1.5}},
    ),
    "triplet": LossInfo(
        "triplet", "triplet", False,
        {"margin": 0.1},
        (8, 4),
        {"margin": {"lo": 0.02, "hi": 1.0, "log": True}},
    ),
    "ntxent": LossInfo(
        "ntxent", "pair", False,
        {"temperature": 0.1},
        (8, 4),
        {"temperature": {"lo": 0.02, "hi": 1.0, "log": True}},
    ),
    "proxynca": LossInfo(
        "proxynca", "classification", True,
        {"scale": 1.0, "param_lr": 1e-2},
        (32, 1),
        {"scale": {"lo": 0.5, "hi": 16.0, "log": True},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "margin": LossInfo(
        "margin", "pair", True,
        {"alpha": 0.2, "beta_init": 1.2, "param_lr": 1e-2},
        (8, 4),
        {"alpha": {"lo": 0.05, "hi": 0.4},
         "beta_init": {"lo": 0.6, "hi": 1.4},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "margin_per_class": LossInfo(
        "margin_per_class", "pair", True,
        {"alpha": 0.2, "beta_init": 1.2, "param_lr": 1e-2},
        (8, 4),
        {"alpha": {"lo": 0.05, "hi": 0.4},
         "beta_init": {"lo": 0.6, "hi": 1.4},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "normalized_softmax": LossInfo(
        "normalized_softmax", "classification", True,
        {"scale": 16.0, "param_lr": 1e-2},
        (32, 1),
        {"scale": {"lo": 4.0, "hi": 64.0, "log": True},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "cosface": LossInfo(
        "cosface", "classification", True,
        {"scale": 32.0, "margin": 0.35, "param_lr": 1e-2},
        (32, 1),
        {"scale": {"lo": 4.0, "hi": 64.0, "log": True},
         "margin": {"lo": 0.0, "hi": 0.5},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "arcface": LossInfo(
        "arcface", "classification", True,
        {"scale": 32.0, "margin": 0.5, "param_lr": 1e-2},
        (32, 1),
        {"scale": {"lo": 4.0, "hi": 64.0, "log": True},
         "margin": {"lo": 0.0, "hi": 1.0},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
    "fastap": LossInfo(
        "fastap", "fastap", False,
        {"num_bins": 10},
        (8, 4),
        {"num_bins": {"lo": 5, "hi": 25, "kind": "int"}},
    ),
    "snr": LossInfo(
        "snr", "pair", False,
        {"pos_margin": 0.0, "neg_margin": 0.5, "reg_weight": 0.1},
        (8, 4),
        {"neg_margin": {"lo": 0.1, "hi": 1.5},
         "reg_weight": {"lo": 0.0, "hi": 0.5}},
    ),
    "multisimilarity": LossInfo(
        "multisimilarity", "pair", False,
        {"alpha": 2.0, "beta": 50.0, "base": 0.5},
        (8, 4),
        {"alpha": {"lo": 0.5, "hi": 10.0, "log": True},
         "beta": {"lo": 10.0, "hi": 80.0, "log": True},
         "base": {"lo": 0.3, "hi": 1.0}},
    ),
    "softtriple": LossInfo(
        "softtriple", "classification", True,
        {"scale": 20.0, "gamma": 0.1, "margin": 0.01,
         "centers_per_class": 2, "param_lr": 1e-2},
        (32, 1),
        {"scale": {"lo": 4.0, "hi": 64.0, "log": True},
         "gamma": {"lo": 0.05, "hi": 1.0, "log": True},
         "margin": {"lo": 0.0, "hi": 0.4},
         "param_lr": {"lo": 1e-4, "hi": 1e-1, "log": True}},
    ),
}


def loss_ids() -> tuple[str, ...]:
    return tuple(LOSS_REGISTRY)


def get_info(loss_id: str) -> LossInfo:
    try:
        return LOSS_REGISTRY[loss_id]
    except KeyError:
        raise UnknownKind(f"unknown loss {loss_id!r}") from None


def resolve_params(loss_id: str, params: dict | None) -> dict:
    info = get_info(loss_id)
    resolved = dict(info.default_params)
    for key, value in (params or {}).items():
        if key not in resolved:
            raise ValueError(f"loss {loss_id!r} has no parameter {key!r}")
        _check_param(loss_id, key, value)
        resolved[key] = value
    return resolved


def make_state(loss_id: str, params: dict | None, classes, dim: int,
               rng: np.random.Generator):
    """Create the learnable state a loss needs, or None."""
    info = get_info(loss_id)
    p = resolve_params(loss_id, params)
    if not info.needs_state:
        return None
    if loss_id == "margin":
        return make_margin_state(p["beta_init"])
    if loss_id == "margin_per_class":
        return make_margin_state(p["beta_init"], classes=classes)
    centers = int(p.get("centers_per_class", 1))
    return make_class_weights(classes, dim, rng, centers_per_class=centers)


def _math_params(loss_id: str, params: dict) -> dict:
    p = {k: v for k, v in params.items() if k not in STRUCTURAL_KEYS}
    if loss_id in ("margin", "margin_per_class"):
        p.pop("beta_init", None)
    return p


def evaluate_loss(loss_id: str, x: np.ndarray, y: np.ndarray,
                  params: dict | None = None, state=None, mined=None) -> LossOutput:
    """Dispatch on the raw (embeddings, labels) arrays. Ambient-space math."""
    info = get_info(loss_id)
    p = _math_params(loss_id, resolve_params(loss_id, params))
    if loss_id == "contrastive":
        return contrastive(x, y, mined=mined, **p)
    if loss_id == "triplet":
        return triplet_margin(x, y, mined=mined, **p)
    if loss_id == "ntxent":
        return ntxent(x, y, mined=mined, **p)
    if loss_id == "multisimilarity":
        return multisimilarity(x, y, mined=mined, **p)
    if loss_id == "snr":
        return snr_contrastive(x, y, mined=mined, **p)
    if loss_id in ("margin", "margin_per_class"):
        if state is None:
            raise ValueError(f"{loss_id} needs a MarginState")
        return margin_loss(x, y, state, mined=mined, **p)
    if loss_id == "fastap":
        return fastap(x, y, **p)
    if info.family == "classification":
        if state is None:
            raise ValueError(f"{loss_id} needs ClassWeights")
        return classification_core(loss_id, x, y, state, **p)
    raise UnknownKind(f"unknown loss {loss_id!r}")


def kink_slack(loss_id: str, x: np.ndarray, y: np.ndarray,
               params: dict | None = None, state=None) -> float:
    """Smallest distance to a non-smooth point of the loss; +inf when smooth."""
    info = get_info(loss_id)
    p = _math_params(loss_id, resolve_params(loss_id, params))
    if loss_id == "contrastive":
        return contrastive_slack(x, y, **p)
    if loss_id == "triplet":
        return triplet_slack(x, y, **p)
    if loss_id == "snr":
        return snr_slack(x, y, **p)
    if loss_id in ("margin", "margin_per_class"):
        return margin_slack(x, y, state, **p)
    if loss_id == "fastap":
        return fastap_slack(x, y, **p)
    if info.family == "classification":
        return classification_slack(loss_id, x, y, state, margin=p.get("margin", 0.0))
    return np.inf


# --- public operations on validated batches ---------------------------------

def contrastive_loss(batch: Batch, params: dict | None = None) -> LossOutput:
    return evaluate_loss("contrastive", batch.embeddings, batch.labels, params)


def triplet_margin_loss(batch: Batch, params: dict | None = None) -> LossOutput:
    return evaluate_loss("triplet", batch.embeddings, batch.labels, params)


def pair_weighting_loss(kind: str, batch: Batch, params: dict | None = None,
                        state=None, mined=None) -> LossOutput:
    if kind not in ("ntxent", "multisimilarity", "snr", "margin", "margin_per_class"):
        raise UnknownKind(f"unknown pair-weighting loss {kind!r}")
    if kind in ("margin", "margin_per_class") and state is None:
        p = resolve_params(kind, params)
        classes = np.unique(batch.labels) if kind == "margin_per_class" else None
        state = make_margin_state(p["beta_init"], classes=classes)
    return evaluate_loss(kind, batch.embeddings, batch.labels, params, state, mined)


def classification_loss(kind: str, batch: Batch, weights: ClassWeights,
                        params: dict | None = None) -> LossOutput:
    if get_info(kind).family != "classification":
        raise UnknownKind(f"{kind!r} is not a classification loss")
    return evaluate_loss(kind, batch.embeddings, batch.labels, params, weights)


def fastap_loss(batch: Batch, params: dict | None = None) -> LossOutput:
    return evaluate_loss("fastap", batch.embeddings, batch.labels, params)


from .gradcheck import gradient_check, random_batch, sample_non_kink_batch  # noqa: E402
