"""TOML benchmark configuration: parsing, validation, defaults, hashing.

Unknown keys are rejected with their full field path. Batch defaults follow
the loss family: 8 classes x 4 samples for embedding losses, 32 x 1 for
classification losses; a ``batch_size`` override keeps the per-class count
and adjusts the class count.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import LabeledData
from .embfiles import read_embeddings
from .errors import ParseError, ValidationError
from .losses import get_info, loss_ids, resolve_params
from .miners import MINER_IDS, BatchSpec, miner_output_kind
from .model import TrainConfig
from .synth import SyntheticSpec, synth_dataset

_TOP_KEYS = {"seed", "out_dir", "jobs", "dataset", "loss", "losses",
             "batch", "trainer", "search", "final"}
_DATASET_KEYS = {"path", "synthetic"}
_SYNTH_KEYS = {"num_classes", "dim", "samples_per_class", "separation",
               "spread", "seed", "noise_dims"}
_LOSS_KEYS = {"id", "params", "space", "miner", "miner_params"}
_BATCH_KEYS = {"classes_per_batch", "samples_per_class", "batch_size"}
_TRAINER_KEYS = {"hidden", "embed_dim", "lr", "rms_alpha", "rms_eps",
                 "max_epochs", "validation_interval", "plateau_patience",
                 "plateau_min_delta", "val_metric"}
_SEARCH_KEYS = {"budget", "strategy"}
_FINAL_KEYS = {"n_runs"}

PAIR_FAMILIES = ("pair",)


def _reject_unknown(table: dict, allowed: set, path: str) -> None:
    for key in table:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ValidationError(f"unknown key {where!r}")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


@dataclass(frozen=True)
class LossSpec:
    loss_id: str
    params: dict = field(default_factory=dict)
    space: dict | None = None
    miner: str = "none"
    miner_params: dict = field(default_factory=dict)


@dataclass
class BenchConfig:
    seed: int = 0
    out_dir: str | None = None
    jobs: int = 1
    dataset_path: str | None = None
    synthetic: SyntheticSpec | None = None
    loss_specs: list[LossSpec] = field(default_factory=list)
    batch: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)
    budget: int = 8
    strategy: str = "random"
    n_runs: int = 10

    def resolved_dict(self) -> dict:
        synth = None
        if self.synthetic is not None:
            synth = {k: getattr(self.synthetic, k) for k in sorted(_SYNTH_KEYS)}
        return {
            "seed": self.seed,
            "jobs": self.jobs,
            "dataset": {"path": self.dataset_path, "synthetic": synth},
            "losses": [
                {
                    "id": s.loss_id,
                    "params": resolve_params(s.loss_id, s.params),
                    "space": s.space,
                    "miner": s.miner,
                    "miner_params": s.miner_params,
                }
                for s in self.loss_specs
            ],
            "batch": self.batch,
            "trainer": self.trainer,
            "search": {"budget": self.budget, "strategy": self.strategy},
            "final": {"n_runs": self.n_runs},
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def load_dataset(self) -> LabeledData:
        if self.synthetic is not None:
            return synth_dataset(self.synthetic)
        embeddings, labels = read_embeddings(self.dataset_path)
        return LabeledData(embeddings.data, labels)

    def batch_spec_for(self, loss_id: str) -> BatchSpec:
        info = get_info(loss_id)
        default_c, default_m = info.default_batch
        b = self.batch
        if "batch_size" in b:
            m = int(b.get("samples_per_class", default_m))
            size = int(b["batch_size"])
            _require(size % m == 0,
                     f"batch.batch_size {size} not divisible by samples_per_class {m}")
            return BatchSpec(size // m, m)
        c = int(b.get("classes_per_batch", default_c))
        m = int(b.get("samples_per_class", default_m))
        return BatchSpec(c, m)

    def train_config(self, spec: LossSpec, seed: int | None = None) -> TrainConfig:
        t = self.trainer
        return TrainConfig(
            loss_id=spec.loss_id,
            loss_params=dict(spec.params),
            miner_id=spec.miner,
            miner_params=dict(spec.miner_params),
            batch_spec=self.batch_spec_for(spec.loss_id),
            hidden=tuple(t.get("hidden", [32])),
            embed_dim=int(t.get("embed_dim", 8)),
            lr=float(t.get("lr", 1e-3)),
            rms_alpha=float(t.get("rms_alpha", 0.99)),
            rms_eps=float(t.get("rms_eps", 1e-8)),
            max_epochs=int(t.get("max_epochs", 20)),
            validation_interval=int(t.get("validation_interval", 10)),
            plateau_patience=int(t.get("plateau_patience", 5)),
            plateau_min_delta=float(t.get("plateau_min_delta", 1e-4)),
            seed=self.seed if seed is None else seed,
            val_metric=str(t.get("val_metric", "map_at_r")),
        )


def _parse_loss_table(table: dict, path: str) -> LossSpec:
    _reject_unknown(table, _LOSS_KEYS, path)
    _require("id" in table, f"{path}.id is required")
    loss_id = table["id"]
    _require(loss_id in loss_ids(), f"{path}.id: unknown loss {loss_id!r}")
    params = dict(table.get("params", {}))
    try:
        resolve_params(loss_id, params)
    except ValueError as exc:
        raise ValidationError(f"{path}.params: {exc}") from exc
    space = table.get("space")
    if space is not None:
        _require(isinstance(space, dict) and space, f"{path}.space must be a non-empty table")
        known = set(get_info(loss_id).default_params)
        for name in space:
            _require(name in known,
                     f"{path}.space.{name}: loss {loss_id!r} has no such parameter")
    miner = table.get("miner", "none")
    _require(miner in MINER_IDS, f"{path}.miner: unknown miner {miner!r}")
    family = get_info(loss_id).family
    kind = miner_output_kind(miner)
    if kind == "pairs":
        _require(family in PAIR_FAMILIES,
                 f"{path}.miner: pair miner {miner!r} needs a pair loss, not {loss_id!r}")
    elif kind == "triplets":
        _require(family == "triplet",
                 f"{path}.miner: triplet miner {miner!r} only works with the triplet loss")
    return LossSpec(loss_id, params, space, miner, dict(table.get("miner_params", {})))


def parse_config(raw: dict) -> BenchConfig:
    _reject_unknown(raw, _TOP_KEYS, "")
    cfg = BenchConfig()
    cfg.seed = int(raw.get("seed", 0))
    cfg.out_dir = raw.get("out_dir")
    cfg.jobs = int(raw.get("jobs", 1))
    _require(cfg.jobs >= 1, "jobs must be >= 1")

    _require("dataset" in raw, "dataset section is required")
    ds = raw["dataset"]
    _reject_unknown(ds, _DATASET_KEYS, "dataset")
    _require(("path" in ds) != ("synthetic" in ds),
             "dataset needs exactly one of 'path' or 'synthetic'")
    if "path" in ds:
        cfg.dataset_path = str(ds["path"])
    else:
        synth = ds["synthetic"]
        _reject_unknown(synth, _SYNTH_KEYS, "dataset.synthetic")
        for key in ("num_classes", "dim", "samples_per_class", "separation", "spread"):
            _require(key in synth, f"dataset.synthetic.{key} is required")
        try:
            cfg.synthetic = SyntheticSpec(
                num_classes=int(synth["num_classes"]),
                dim=int(synth["dim"]),
                samples_per_class=int(synth["samples_per_class"]),
                separation=float(synth["separation"]),
                spread=float(synth["spread"]),
                seed=int(synth.get("seed", 0)),
                noise_dims=int(synth.get("noise_dims", 0)),
            )
        except ValidationError as exc:
            raise ValidationError(f"dataset.synthetic: {exc}") from exc

    _require(("loss" in raw) != ("losses" in raw),
             "config needs exactly one of a [loss] table or a [[losses]] array")
    if "loss" in raw:
        cfg.loss_specs = [_parse_loss_table(raw["loss"], "loss")]
    else:
        entries = raw["losses"]
        _require(isinstance(entries, list) and entries, "losses must be a non-empty array")
        cfg.loss_specs = [_parse_loss_table(t, f"losses[{i}]")
                          for i, t in enumerate(entries)]
        seen = [s.loss_id for s in cfg.loss_specs]
        _require(len(set(seen)) == len(seen), "losses: duplicate loss ids")

    batch = raw.get("batch", {})
    _reject_unknown(batch, _BATCH_KEYS, "batch")
    _require(not ("batch_size" in batch and "classes_per_batch" in batch),
             "batch: give batch_size or classes_per_batch, not both")
    cfg.batch = dict(batch)

    trainer = raw.get("trainer", {})
    _reject_unknown(trainer, _TRAINER_KEYS, "trainer")
    cfg.trainer = dict(trainer)
    _require(cfg.trainer.get("val_metric", "map_at_r")
             in ("map_at_r", "r_precision", "p_at_1"),
             "trainer.val_metric must be one of map_at_r, r_precision, p_at_1")
    _require(int(cfg.trainer.get("validation_interval", 10)) >= 1,
             "trainer.validation_interval must be >= 1")
    _require(int(cfg.trainer.get("plateau_patience", 5)) >= 1,
             "trainer.plateau_patience must be >= 1")

    search = raw.get("search", {})
    _reject_unknown(search, _SEARCH_KEYS, "search")
    cfg.budget = int(search.get("budget", 8))
    cfg.strategy = str(search.get("strategy", "random"))
    _require(cfg.budget >= 1, "search.budget must be >= 1")
    _require(cfg.strategy in ("random", "model_based"),
             f"search.strategy: unknown strategy {cfg.strategy!r}")

    final = raw.get("final", {})
    _reject_unknown(final, _FINAL_KEYS, "final")
    cfg.n_runs = int(final.get("n_runs", 10))
    _require(cfg.n_runs >= 2, "final.n_runs must be >= 2")
    return cfg


def load_config(path) -> BenchConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_config(raw)
