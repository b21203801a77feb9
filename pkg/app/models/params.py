"""
Parameter-space value types
ParamVector is the unit the server aggregates; AggregationWeights a point on the simplex
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.core.exceptions import ArchitectureError, ContractViolation, NumericError
from app.schemas.model import ModelArch


def _frozen(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ParamVector:
    """
    Flat model parameters tagged with the fingerprint of their architecture.

    Attributes:
        values: Read-only float64 vector
        arch_fingerprint: ModelArch.fingerprint of the owning architecture
    """

    values: np.ndarray
    arch_fingerprint: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))
        if not np.all(np.isfinite(self.values)):
            raise NumericError("Parameter vector contains non-finite entries")

    @classmethod
    def for_arch(cls, arch: ModelArch, values: np.ndarray) -> "ParamVector":
        """Build a vector for `arch`, checking its length."""
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size != arch.param_count:
            raise ArchitectureError(f"Expected {arch.param_count} parameters, got {flat.size}")
        return cls(flat, arch.fingerprint)

    @classmethod
    def zeros(cls, arch: ModelArch) -> "ParamVector":
        return cls(np.zeros(arch.param_count), arch.fingerprint)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.arch_fingerprint == other.arch_fingerprint and np.array_equal(self.values, other.values)

    def check_arch(self, arch: ModelArch) -> None:
        """Raise ArchitectureError unless this vector belongs to `arch`."""
        if self.arch_fingerprint != arch.fingerprint or self.values.size != arch.param_count:
            raise ArchitectureError(
                f"Parameter fingerprint {self.arch_fingerprint} does not match architecture {arch.fingerprint}"
            )

    def replace(self, values: np.ndarray) -> "ParamVector":
        """Same architecture, new values."""
        return ParamVector(values, self.arch_fingerprint)


@dataclass(frozen=True, eq=False)
class AggregationWeights:
    """
    Client collaboration weights; nonnegative and summing to one.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        array = _frozen(self.weights)
        if array.size == 0:
            raise ContractViolation("Aggregation weights must not be empty")
        if np.any(array < 0) or not np.all(np.isfinite(array)):
            raise ContractViolation("Aggregation weights must be finite and nonnegative")
        if abs(float(array.sum()) - 1.0) > 1e-9:
            raise ContractViolation(f"Aggregation weights sum to {float(array.sum())!r}, expected 1")
        object.__setattr__(self, "weights", array)

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def one_hot(cls, n: int, index: int) -> "AggregationWeights":
        weights = np.zeros(n)
        weights[index] = 1.0
        return cls(weights)

    @classmethod
    def proportional(cls, sizes: Sequence[float]) -> "AggregationWeights":
        """Weights proportional to nonnegative sizes (FedAvg data-size weighting)."""
        array = np.asarray(sizes, dtype=np.float64)
        total = float(array.sum())
        if total <= 0:
            raise ContractViolation("Cannot weight by sizes that sum to zero")
        return cls(array / total)

    def __len__(self) -> int:
        return int(self.weights.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AggregationWeights):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def tolist(self) -> list[float]:
        return [float(w) for w in self.weights]
