"""Labeled raw-input data container used by training and the protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedcore import LabelSet
from .errors import LengthMismatch


@dataclass(frozen=True)
class LabeledData:
    """Raw inputs (n x d_in) paired with class labels."""

    inputs: np.ndarray
    labels: LabelSet

    def __post_init__(self):
        arr = np.asarray(self.inputs, dtype=np.float64)
        if arr.ndim != 2:
            raise LengthMismatch(f"inputs must be 2-D, got shape {arr.shape}")
        if arr.shape[0] != len(self.labels):
            raise LengthMismatch(f"{arr.shape[0]} inputs vs {len(self.labels)} labels")
        object.__setattr__(self, "inputs", arr)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "LabeledData":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledData(self.inputs[idx], LabelSet(self.labels.labels[idx]))

    def restrict_classes(self, classes) -> "LabeledData":
        keep = np.isin(self.labels.labels, np.asarray(list(classes), dtype=np.int64))
        return self.subset(np.flatnonzero(keep))
