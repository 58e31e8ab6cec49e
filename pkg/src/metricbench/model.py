"""From-scratch MLP embedder, exact backpropagation, RMSprop, and the
plateau-stopping training loop.

The embedder is a plain affine+ReLU stack with a linear output layer whose
rows are L2-normalized by default. Backward is exact reverse-mode including
the normalization Jacobian (I - u u^T) / |v|. One training run is
single-threaded and bit-deterministic given its seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledData
from .embedcore import EmbeddingSet
from .errors import (
    DimMismatch,
    DisjointnessViolation,
    NonFiniteLoss,
    ShapeMismatch,
    StaleCache,
    ZeroVector,
)
from .losses import evaluate_loss, get_info, make_state, resolve_params
from .losses.common import Batch
from .metrics import compute_report
from .miners import BatchSpec, mine, sample_batch

CHECKPOINT_MAGIC = b"MLP1"


@dataclass
class MlpEmbedder:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    final_l2_normalize: bool = True

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_embed(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpEmbedder":
        return MlpEmbedder(self.widths, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.final_l2_normalize)


def init_mlp(widths, rng: np.random.Generator, final_l2_normalize: bool = True) -> MlpEmbedder:
    """He-uniform weight init, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise DimMismatch(f"need at least input and output widths >= 1, got {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpEmbedder(widths, weights, biases, final_l2_normalize)


@dataclass
class ForwardCache:
    model_token: int
    layer_inputs: list[np.ndarray]
    relu_masks: list[np.ndarray]
    prenorm: np.ndarray
    norms: np.ndarray | None


def forward(model: MlpEmbedder, x: np.ndarray) -> tuple[EmbeddingSet, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimMismatch(f"input shape {x.shape} vs model d_in {model.d_in}")
    layer_inputs = []
    relu_masks = []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        layer_inputs.append(a)
        z = a @ w + b
        if l < last:
            mask = z > 0.0
            relu_masks.append(mask)
            a = z * mask
        else:
            a = z
    prenorm = a
    norms = None
    if model.final_l2_normalize:
        norms = np.linalg.norm(prenorm, axis=1)
        if np.any(norms <= 1e-12):
            raise ZeroVector("embedder produced a (near-)zero vector before normalization")
        a = prenorm / norms[:, None]
    cache = ForwardCache(id(model), layer_inputs, relu_masks, prenorm, norms)
    return EmbeddingSet(a), cache


def embed(model: MlpEmbedder, x: np.ndarray) -> EmbeddingSet:
    emb, _ = forward(model, x)
    return emb


def backward(model: MlpEmbedder, cache: ForwardCache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients for [W0, b0, W1, b1, ...] given d(loss)/d(embeddings)."""
    if cache.model_token != id(model):
        raise StaleCache("cache does not belong to this model instance")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.prenorm.shape:
        raise ShapeMismatch(f"grad_out shape {g.shape} vs output {cache.prenorm.shape}")
    if model.final_l2_normalize:
        u = cache.prenorm / cache.norms[:, None]
        g = (g - u * np.einsum("ij,ij->i", g, u)[:, None]) / cache.norms[:, None]
    grads: list[np.ndarray] = []
    last = len(model.weights) - 1
    for l in range(last, -1, -1):
        if l < last:
            g = g * cache.relu_masks[l]
        a_prev = cache.layer_inputs[l]
        grads.append(g.sum(axis=0))        # bias
        grads.append(a_prev.T @ g)         # weight
        if l > 0:
            g = g @ model.weights[l].T
    grads.reverse()
    return grads


@dataclass
class RmspropState:
    """Elementwise RMSprop over a list of parameter arrays.

    The 1e-6 default learning rate is the convnet-scale setting; the trainer
    config raises it for the MLP.
    """

    lr: float = 1e-6
    alpha: float = 0.99
    eps: float = 1e-8
    v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")

    def ensure(self, params: list[np.ndarray]) -> None:
        if not self.v:
            self.v = [np.zeros_like(p) for p in params]


def rmsprop_step(state: RmspropState, params: list[np.ndarray],
                 grads: list[np.ndarray]) -> None:
    """v <- alpha v + (1 - alpha) g^2 ; p <- p - lr g / (sqrt(v) + eps). In place."""
    state.ensure(params)
    if len(params) != len(grads) or len(params) != len(state.v):
        raise ShapeMismatch("parameter/gradient/state list lengths differ")
    for p, g, v in zip(params, grads, state.v):
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeMismatch(f"param shape {p.shape} vs grad shape {g.shape}")
        v *= state.alpha
        v += (1.0 - state.alpha) * g * g
        p -= state.lr * g / (np.sqrt(v) + state.eps)
    state.step_count += 1


@dataclass(frozen=True)
class TrainConfig:
    loss_id: str
    loss_params: dict = field(default_factory=dict)
    miner_id: str = "none"
    miner_params: dict = field(default_factory=dict)
    batch_spec: BatchSpec | None = None
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 8
    lr: float = 1e-3
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    max_epochs: int = 20
    validation_interval: int = 10
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    seed: int = 0
    val_metric: str = "map_at_r"

    def __post_init__(self):
        if self.validation_interval < 1:
            raise ValueError("validation_interval must be >= 1")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")

    def resolved_batch_spec(self) -> BatchSpec:
        if self.batch_spec is not None:
            return self.batch_spec
        c, m = get_info(self.loss_id).default_batch
        return BatchSpec(c, m)


VAL_SERIES_METRICS = ("p_at_1", "r_precision", "map_at_r")


@dataclass
class TrainResult:
    model: MlpEmbedder
    loss_state: object
    series: list[float]
    best_index: int
    steps_run: int
    series_by_metric: dict = field(default_factory=dict)

    @property
    def best_score(self) -> float:
        return self.series[self.best_index]


def _mined_empty(mined) -> bool:
    if hasattr(mined, "n_pos"):
        return mined.n_pos == 0 and mined.n_neg == 0
    return len(mined) == 0


def _val_report(model: MlpEmbedder, val: LabeledData):
    emb = embed(model, val.inputs)
    return compute_report(emb, val.labels)


def fit_until_plateau(train: LabeledData, val: LabeledData, cfg: TrainConfig) -> TrainResult:
    """Train with RMSprop until the validation score stops improving.

    Validation runs once before training and then every
    ``validation_interval`` steps; training stops after ``plateau_patience``
    consecutive checks without an improvement greater than
    ``plateau_min_delta``, or when the epoch budget runs out. The returned
    checkpoint is the one with the best validation score.
    """
    train_classes = set(train.labels.classes.tolist())
    val_classes = set(val.labels.classes.tolist())
    if train_classes & val_classes:
        raise DisjointnessViolation(
            f"train/val classes overlap: {sorted(train_classes & val_classes)[:5]}")
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.resolved_batch_spec()
    model = init_mlp((train.dim, *cfg.hidden, cfg.embed_dim), rng)
    params = resolve_params(cfg.loss_id, cfg.loss_params)
    state = make_state(cfg.loss_id, cfg.loss_params, train.labels.classes,
                       cfg.embed_dim, rng)
    model_opt = RmspropState(lr=cfg.lr, alpha=cfg.rms_alpha, eps=cfg.rms_eps)
    state_opt = None
    state_keys: list[str] = []
    if state is not None:
        state_opt = RmspropState(lr=float(params.get("param_lr", 1e-2)),
                                 alpha=cfg.rms_alpha, eps=cfg.rms_eps)
        state_keys = sorted(state.learnables())
    is_cosine_weights = get_info(cfg.loss_id).family == "classification"

    steps_per_epoch = max(1, train.n // spec.batch_size)
    total_steps = cfg.max_epochs * steps_per_epoch

    series_by_metric: dict[str, list[float]] = {m: [] for m in VAL_SERIES_METRICS}

    def check_validation() -> float:
        report = _val_report(model, val)
        for m in VAL_SERIES_METRICS:
            series_by_metric[m].append(getattr(report, m))
        return getattr(report, cfg.val_metric)

    series = [check_validation()]
    best_index = 0
    best_model = model.copy()
    best_state = state.copy() if state is not None else None
    bad_checks = 0
    steps_run = 0

    for step in range(1, total_steps + 1):
        idx = sample_batch(train.labels, spec, rng)
        x = train.inputs[idx]
        y = train.labels.labels[idx]
        emb, cache = forward(model, x)
        batch = Batch(emb.data, y)
        mined = mine(cfg.miner_id, batch, cfg.miner_params, rng)
        if mined is None or not _mined_empty(mined):
            out = evaluate_loss(cfg.loss_id, emb.data, y, cfg.loss_params, state, mined)
            if not np.isfinite(out.value) or not np.all(np.isfinite(out.grad_embeddings)):
                raise NonFiniteLoss(
                    f"step {step}: loss {out.value!r} with non-finite gradients")
            grads = backward(model, cache, out.grad_embeddings)
            rmsprop_step(model_opt, model.parameters(), grads)
            if state is not None and out.grad_params:
                learnables = state.learnables()
                rmsprop_step(state_opt, [learnables[k] for k in state_keys],
                             [out.grad_params[k] for k in state_keys])
                if is_cosine_weights:
                    state.renormalize_columns()
        steps_run = step
        if step % cfg.validation_interval == 0:
            score = check_validation()
            # any strict improvement wins the checkpoint; only improvements
            # beyond min_delta reset the plateau counter
            cleared_delta = score > series[best_index] + cfg.plateau_min_delta
            if score > series[best_index]:
                best_index = len(series)
                best_model = model.copy()
                best_state = state.copy() if state is not None else None
            series.append(score)
            if cleared_delta:
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= cfg.plateau_patience:
                    break
    return TrainResult(best_model, best_state, series, best_index, steps_run,
                       series_by_metric)


def save_checkpoint(path, model: MlpEmbedder, config_hash: str = "",
                    validation_series=()) -> None:
    """Binary MLP1 file plus a JSON sidecar at <path>.json."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(model.widths)))
        fh.write(np.asarray(model.widths, dtype="<u4").tobytes())
        for w, b in zip(model.weights, model.biases):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
    sidecar = {
        "config_hash": config_hash,
        "validation_series": list(map(float, validation_series)),
        "final_l2_normalize": model.final_l2_normalize,
    }
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_checkpoint(path) -> tuple[MlpEmbedder, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise StaleCache(f"{path}: not an MLP1 checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        widths = tuple(np.frombuffer(fh.read(4 * count), dtype="<u4").astype(int))
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
            weights.append(w.reshape(fan_in, fan_out).copy())
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            biases.append(b.copy())
    try:
        with open(f"{path}.json") as fh:
            sidecar = json.load(fh)
    except OSError:
        sidecar = {}
    model = MlpEmbedder(widths, weights, biases,
                        bool(sidecar.get("final_l2_normalize", True)))
    return model, sidecar
