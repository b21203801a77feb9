"""
Labeled sample batches shared by training, replay and evaluation
"""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from app.core.exceptions import ContractViolation


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    """
    Feature rows with integer labels and a per-row synthetic flag.

    Attributes:
        features: (n, d) float64 matrix
        labels: (n,) int64 vector
        is_synthetic: (n,) bool mask, True for replayed rows
    """

    features: np.ndarray
    labels: np.ndarray
    is_synthetic: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features.reshape(-1, 1) if features.size else features.reshape(0, 0)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.shape[0] != labels.shape[0]:
            raise ContractViolation(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if self.is_synthetic is None:
            synthetic = np.zeros(labels.shape[0], dtype=bool)
        else:
            synthetic = np.array(self.is_synthetic, dtype=bool, copy=True).reshape(-1)
            if synthetic.shape[0] != labels.shape[0]:
                raise ContractViolation("is_synthetic mask length differs from label count")
        object.__setattr__(self, "features", _readonly(features))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "is_synthetic", _readonly(synthetic))

    @classmethod
    def empty(cls, feature_dim: int = 0) -> "LabeledBatch":
        return cls(np.zeros((0, feature_dim)), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, batches: Iterable["LabeledBatch"]) -> "LabeledBatch":
        """Stack batches in order; empty batches are skipped."""
        parts = [batch for batch in batches if len(batch)]
        if not parts:
            return cls.empty()
        dims = {batch.feature_dim for batch in parts}
        if len(dims) != 1:
            raise ContractViolation(f"Cannot concatenate batches with feature dims {sorted(dims)}")
        return cls(
            np.vstack([batch.features for batch in parts]),
            np.concatenate([batch.labels for batch in parts]),
            np.concatenate([batch.is_synthetic for batch in parts]),
        )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1]) if self.features.ndim == 2 else 0

    def subset(self, index: np.ndarray) -> "LabeledBatch":
        return LabeledBatch(self.features[index], self.labels[index], self.is_synthetic[index])

    def real(self) -> "LabeledBatch":
        """Rows that came from the dataset."""
        return self.subset(~self.is_synthetic)

    def rows_of(self, class_id: int) -> np.ndarray:
        """Feature rows labelled `class_id`."""
        return self.features[self.labels == class_id]

    def check_labels(self, num_classes: int) -> None:
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            raise ContractViolation(f"Labels must lie in [0, {num_classes})")
