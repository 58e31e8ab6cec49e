"""Synthetic datasets: Gaussian classes around well-separated hypersphere
centers, the desk-scale stand-in for image datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledData
from .embedcore import LabelSet
from .errors import SeparationInfeasible, ValidationError

MAX_PLACEMENT_TRIES = 40
MAX_RADIUS_ESCALATIONS = 8


@dataclass(frozen=True)
class SyntheticSpec:
    """Class centers on a hypersphere, isotropic Gaussian samples around them.

    ``noise_dims`` appends that many class-independent dimensions whose
    per-dimension variance matches the signal dimensions, so the class
    information cannot be recovered by variance alone (PCA-proof noise).
    """

    num_classes: int
    dim: int
    samples_per_class: int
    separation: float
    spread: float
    seed: int = 0
    noise_dims: int = 0

    def __post_init__(self):
        if self.num_classes < 8:
            raise ValidationError(f"num_classes must be >= 8, got {self.num_classes}")
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if self.samples_per_class < 2:
            raise ValidationError(
                f"samples_per_class must be >= 2, got {self.samples_per_class}")
        if not self.separation > 0:
            raise ValidationError("separation must be > 0")
        if not self.spread > 0:
            raise ValidationError("spread must be > 0")
        if self.noise_dims < 0:
            raise ValidationError("noise_dims must be >= 0")

    @property
    def total_dim(self) -> int:
        return self.dim + self.noise_dims

    @property
    def n_samples(self) -> int:
        return self.num_classes * self.samples_per_class


def _place_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    radius = spec.separation
    for _ in range(MAX_RADIUS_ESCALATIONS):
        for _ in range(MAX_PLACEMENT_TRIES):
            raw = rng.standard_normal((spec.num_classes, spec.dim))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            centers = raw * radius
            diff = centers[:, None, :] - centers[None, :, :]
            d = np.sqrt((diff ** 2).sum(axis=2))
            np.fill_diagonal(d, np.inf)
            if d.min() >= spec.separation:
                return centers
        radius *= 1.5
    raise SeparationInfeasible(
        f"could not place {spec.num_classes} centers with separation "
        f"{spec.separation} in dim {spec.dim}")


def synth_dataset(spec: SyntheticSpec) -> LabeledData:
    """Deterministic synthetic dataset for the given spec."""
    rng = np.random.default_rng(spec.seed)
    centers = _place_centers(spec, rng)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    signal = centers[labels] + spec.spread * rng.standard_normal(
        (spec.n_samples, spec.dim))
    if spec.noise_dims:
        radius = float(np.linalg.norm(centers[0]))
        noise_std = np.sqrt(radius ** 2 / spec.dim + spec.spread ** 2)
        noise = noise_std * rng.standard_normal((spec.n_samples, spec.noise_dims))
        inputs = np.hstack([signal, noise])
    else:
        inputs = signal
    return LabeledData(inputs, LabelSet(labels))
