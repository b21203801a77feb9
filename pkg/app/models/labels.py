"""
Per-class label counts
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from app.core.exceptions import ContractViolation


@dataclass(frozen=True)
class LabelCountVector:
    """
    Nonnegative integer count per class id; absent classes count zero.

    Zero entries are dropped on construction so equal vectors compare equal.
    """

    counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cleaned: dict[int, int] = {}
        for class_id, count in sorted(self.counts.items()):
            if int(count) < 0:
                raise ContractViolation(f"Negative count {count} for class {class_id}")
            if int(count):
                cleaned[int(class_id)] = int(count)
        object.__setattr__(self, "counts", MappingProxyType(cleaned))

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "LabelCountVector":
        values, counts = np.unique(np.fromiter(labels, dtype=np.int64), return_counts=True)
        return cls(dict(zip(values.tolist(), counts.tolist())))

    def __getitem__(self, class_id: int) -> int:
        return self.counts.get(int(class_id), 0)

    def __add__(self, other: "LabelCountVector") -> "LabelCountVector":
        merged = dict(self.counts)
        for class_id, count in other.counts.items():
            merged[class_id] = merged.get(class_id, 0) + count
        return LabelCountVector(merged)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelCountVector):
            return NotImplemented
        return dict(self.counts) == dict(other.counts)

    def __hash__(self) -> int:
        return hash(tuple(self.counts.items()))

    def __bool__(self) -> bool:
        return bool(self.counts)

    def support(self) -> frozenset[int]:
        """Classes with a positive count."""
        return frozenset(self.counts)

    def total(self) -> int:
        return sum(self.counts.values())

    def max_count(self) -> int:
        return max(self.counts.values(), default=0)

    def dominates(self, other: "LabelCountVector") -> bool:
        """True if every count is >= the other's."""
        return all(self[c] >= n for c, n in other.counts.items())

    def as_dict(self) -> dict[int, int]:
        return dict(self.counts)
