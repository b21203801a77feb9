"""
Dataset storage and task-stream value types
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from app.core.exceptions import ContractViolation
from app.models.labels import LabelCountVector


def _pools(features: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, ...]:
    pools = []
    for class_id in range(num_classes):
        pool = np.array(features[labels == class_id], dtype=np.float64, copy=True)
        pool.setflags(write=False)
        pools.append(pool)
    return tuple(pools)


@dataclass(frozen=True, eq=False)
class DatasetStore:
    """
    Per-class train and test pools.

    Attributes:
        train_pools: One (n_c, d) array per class, in dataset order
        test_pools: One (m_c, d) array per class, disjoint from train_pools
        feature_dim: Feature dimension d
        num_classes: Number of classes
    """

    train_pools: tuple[np.ndarray, ...]
    test_pools: tuple[np.ndarray, ...]
    feature_dim: int
    num_classes: int

    def __post_init__(self) -> None:
        if len(self.train_pools) != self.num_classes or len(self.test_pools) != self.num_classes:
            raise ContractViolation("One train and one test pool per class required")
        for pool in (*self.train_pools, *self.test_pools):
            if pool.size and pool.shape[1] != self.feature_dim:
                raise ContractViolation("Pool feature dimension mismatch")

    @classmethod
    def from_arrays(
        cls,
        train_features: np.ndarray,
        train_labels: np.ndarray,
        test_features: np.ndarray,
        test_labels: np.ndarray,
        num_classes: int,
    ) -> "DatasetStore":
        """Group labelled rows into per-class pools."""
        for labels in (train_labels, test_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
                raise ContractViolation(f"Labels must lie in [0, {num_classes})")
        return cls(
            train_pools=_pools(train_features, train_labels, num_classes),
            test_pools=_pools(test_features, test_labels, num_classes),
            feature_dim=int(train_features.shape[1]),
            num_classes=num_classes,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetStore):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.num_classes == other.num_classes
            and all(np.array_equal(a, b) for a, b in zip(self.train_pools, other.train_pools))
            and all(np.array_equal(a, b) for a, b in zip(self.test_pools, other.test_pools))
        )


@dataclass(frozen=True)
class TaskSpec:
    """
    One client's task in one round.

    Attributes:
        round: 1-based federated round
        class_counts: Training samples per class
        part_index: Which nonoverlapping slice of each class pool to draw
        num_parts: Into how many slices each class pool is divided for this client
    """

    round: int
    class_counts: LabelCountVector
    part_index: Mapping[int, int] = field(default_factory=dict)
    num_parts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "part_index", MappingProxyType(dict(sorted(self.part_index.items()))))
        object.__setattr__(self, "num_parts", MappingProxyType(dict(sorted(self.num_parts.items()))))
        for class_id in self.class_counts.support():
            part, parts = self.part_index.get(class_id), self.num_parts.get(class_id)
            if part is None or parts is None or not 0 <= part < parts:
                raise ContractViolation(f"Task for round {self.round} has no valid slice for class {class_id}")

    @property
    def classes(self) -> frozenset[int]:
        return self.class_counts.support()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TaskSpec):
            return NotImplemented
        return (
            self.round == other.round
            and self.class_counts == other.class_counts
            and dict(self.part_index) == dict(other.part_index)
            and dict(self.num_parts) == dict(other.num_parts)
        )

    def __hash__(self) -> int:
        return hash((self.round, self.class_counts, tuple(self.part_index.items())))


@dataclass(frozen=True)
class TaskStream:
    """Ordered per-round tasks of one client."""

    client_id: int
    tasks: Sequence[TaskSpec]

    def __post_init__(self) -> None:
        tasks = tuple(self.tasks)
        if [task.round for task in tasks] != list(range(1, len(tasks) + 1)):
            raise ContractViolation("Task rounds must run 1, 2, 3, ... without gaps")
        object.__setattr__(self, "tasks", tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def task(self, round_index: int) -> TaskSpec:
        return self.tasks[round_index - 1]
