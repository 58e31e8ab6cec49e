"""Hyperparameter search over loss parameters.

Two strategies: plain random sampling (the desk-scale default) and
sequential model-based optimization with a Gaussian-process surrogate and
expected-improvement acquisition. Every trial runs 4-fold cross-validation
and is scored by the mean best validation accuracy across folds; the search
returns the argmax trial. Fully deterministic given the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .dataset import LabeledData
from .errors import EmptySpace, UnknownKind, ValidationError
from .model import TrainConfig
from .protocol import FoldPlan, derive_seed, run_cross_validation

STRATEGIES = ("random", "model_based")


@dataclass(frozen=True)
class SpaceDim:
    """One search dimension: continuous (optionally log-scaled or integer)
    or categorical."""

    name: str
    lo: float | None = None
    hi: float | None = None
    log: bool = False
    kind: str = "float"  # float | int | categorical
    choices: tuple = ()

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.choices:
                raise ValidationError(f"{self.name}: categorical dim needs choices")
            return
        if self.kind not in ("float", "int"):
            raise ValidationError(f"{self.name}: unknown dim kind {self.kind!r}")
        if self.lo is None or self.hi is None or not self.lo < self.hi:
            raise ValidationError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValidationError(f"{self.name}: log scale needs lo > 0")

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.log:
            value = float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))
        else:
            value = float(rng.uniform(self.lo, self.hi))
        if self.kind == "int":
            return int(np.clip(round(value), self.lo, self.hi))
        return value

    def to_unit(self, value: float) -> float:
        if self.log:
            return (np.log(value) - np.log(self.lo)) / (np.log(self.hi) - np.log(self.lo))
        return (value - self.lo) / (self.hi - self.lo)

    def from_unit(self, u: float):
        u = float(np.clip(u, 0.0, 1.0))
        if self.log:
            value = float(np.exp(np.log(self.lo) + u * (np.log(self.hi) - np.log(self.lo))))
        else:
            value = float(self.lo + u * (self.hi - self.lo))
        if self.kind == "int":
            return int(np.clip(round(value), self.lo, self.hi))
        return value


@dataclass(frozen=True)
class HyperparamSpace:
    dims: tuple[SpaceDim, ...]

    def __post_init__(self):
        if not self.dims:
            raise EmptySpace("hyperparameter space has no dimensions")

    @classmethod
    def from_dict(cls, spec: dict) -> "HyperparamSpace":
        dims = []
        for name, d in spec.items():
            if "choices" in d:
                dims.append(SpaceDim(name, kind="categorical", choices=tuple(d["choices"])))
            else:
                dims.append(SpaceDim(name, lo=d["lo"], hi=d["hi"],
                                     log=bool(d.get("log", False)),
                                     kind=d.get("kind", "float")))
        return cls(tuple(dims))

    def sample(self, rng: np.random.Generator) -> dict:
        return {d.name: d.sample(rng) for d in self.dims}

    @property
    def continuous(self) -> tuple[SpaceDim, ...]:
        return tuple(d for d in self.dims if d.kind != "categorical")


@dataclass
class TrialRecord:
    index: int
    params: dict
    fold_scores: list[float]
    mean_score: float
    seeds: list[int]
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "trial": self.index,
            "params": self.params,
            "fold_scores": self.fold_scores,
            "mean_score": self.mean_score,
            "seeds": self.seeds,
            "wall_time": self.wall_time,
        }


@dataclass
class SearchResult:
    best: TrialRecord
    trials: list[TrialRecord]


class _GaussianProcess:
    """RBF-kernel GP on the unit cube with fixed hyperparameters."""

    def __init__(self, x: np.ndarray, y: np.ndarray,
                 lengthscale: float = 0.25, noise: float = 1e-4):
        self.x = x
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.y = (y - self.y_mean) / self.y_std
        self.lengthscale = lengthscale
        k = self._kernel(x, x) + (noise + 1e-10) * np.eye(len(x))
        self.chol = cho_factor(k, lower=True)
        self.alpha = cho_solve(self.chol, self.y)

    def _kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-0.5 * d2 / self.lengthscale ** 2)

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ks = self._kernel(x, self.x)
        mu = ks @ self.alpha
        v = cho_solve(self.chol, ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", ks, v), 1e-12)
        return (mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std)


def _expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float,
                          xi: float = 0.01) -> np.ndarray:
    gap = mu - best - xi
    z = gap / sigma
    return gap * norm.cdf(z) + sigma * norm.pdf(z)


def _propose_model_based(space: HyperparamSpace, trials: list[TrialRecord],
                         rng: np.random.Generator, n_candidates: int = 512) -> dict:
    cont = space.continuous
    if not cont:
        return space.sample(rng)
    x = np.array([[d.to_unit(t.params[d.name]) for d in cont] for t in trials])
    y = np.array([t.mean_score for t in trials])
    gp = _GaussianProcess(x, y)
    candidates = rng.random((n_candidates, len(cont)))
    mu, sigma = gp.predict(candidates)
    ei = _expected_improvement(mu, sigma, float(y.max()))
    pick = candidates[int(np.argmax(ei))]
    params = {d.name: d.from_unit(u) for d, u in zip(cont, pick)}
    for d in space.dims:
        if d.kind == "categorical":
            params[d.name] = d.sample(rng)
    return params


def hyperparameter_search(
    space: HyperparamSpace,
    budget: int,
    strategy: str,
    base_cfg: TrainConfig,
    data: LabeledData,
    plan: FoldPlan,
    seed: int = 0,
    jobs: int = 1,
    n_initial: int | None = None,
    on_trial=None,
) -> SearchResult:
    """Run ``budget`` trials and return the argmax by mean validation score."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if strategy not in STRATEGIES:
        raise UnknownKind(f"unknown search strategy {strategy!r}")
    rng = np.random.default_rng(derive_seed(seed, 104729))
    if n_initial is None:
        n_initial = min(budget, max(4, len(space.dims) + 1))
    trials: list[TrialRecord] = []
    for t in range(budget):
        if strategy == "model_based" and t >= n_initial:
            params = _propose_model_based(space, trials, rng)
        else:
            params = space.sample(rng)
        trial_seed = derive_seed(seed, 15485863, t)
        cfg = replace(base_cfg,
                      loss_params={**base_cfg.loss_params, **params},
                      seed=trial_seed)
        started = time.perf_counter()
        cv = run_cross_validation(data, plan, cfg, jobs=jobs)
        elapsed = time.perf_counter() - started
        fold_seeds = [derive_seed(trial_seed, i) for i in range(plan.n_folds)]
        record = TrialRecord(t, params, [float(s) for s in cv.fold_scores],
                             cv.mean_score, fold_seeds, elapsed)
        trials.append(record)
        if on_trial is not None:
            on_trial(record)
    best = max(trials, key=lambda r: r.mean_score)
    return SearchResult(best, trials)
