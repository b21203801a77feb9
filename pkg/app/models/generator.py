"""
Auxiliary (generative) model value types
One density sub-model per class; the client's auxiliary model is the class -> sub-model map
"""
import struct
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from app.core.exceptions import ContractViolation
from app.models.labels import LabelCountVector

VARIANCE_FLOOR = 1e-6

# kind tag, component count, feature dim
_HEADER = struct.Struct("<BII")
# downgrade flag, fit sample count
_TRAILER = struct.Struct("<BQ")


class GeneratorKind(str, Enum):
    """Per-class density model family."""

    DIAG_GAUSSIAN = "diag_gaussian"
    GMM = "gmm"


_KIND_TAGS = {GeneratorKind.DIAG_GAUSSIAN: 0, GeneratorKind.GMM: 1}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


class FitBudget(str, Enum):
    """Training budget for a sub-model fit."""

    INIT = "init"  # cold start, long EM schedule
    TRANSFER = "transfer"  # warm start from an existing sub-model, short schedule


@dataclass(frozen=True, eq=False)
class GeneratorParams:
    """
    Diagonal-covariance mixture parameters (a single component for diag_gaussian).

    Attributes:
        kind: Model family
        means: (k, d) component means
        variances: (k, d) per-dimension variances, floored
        weights: (k,) mixing weights on the simplex
        fit_sample_count: Number of rows the last fit saw
        downgraded: True if a gmm fit fell back to diag_gaussian for lack of data
    """

    kind: GeneratorKind
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    fit_sample_count: int
    downgraded: bool = False

    def __post_init__(self) -> None:
        means = np.array(self.means, dtype=np.float64, copy=True, ndmin=2)
        variances = np.array(self.variances, dtype=np.float64, copy=True, ndmin=2)
        weights = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        if means.shape != variances.shape or means.shape[0] != weights.shape[0]:
            raise ContractViolation("Inconsistent generator parameter shapes")
        if np.any(variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ContractViolation("Generator variances must respect the variance floor")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ContractViolation("Generator component weights must lie on the simplex")
        for name, array in (("means", means), ("variances", variances), ("weights", weights)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.means.shape[1])

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `count` feature rows."""
        if count <= 0:
            return np.zeros((0, self.feature_dim))
        components = rng.choice(self.n_components, size=count, p=self.weights)
        noise = rng.standard_normal((count, self.feature_dim))
        return self.means[components] + np.sqrt(self.variances[components]) * noise

    def to_bytes(self) -> bytes:
        """
        Flat little-endian record: kind tag u8, component count u32, feature dim u32, then
        means, variances and weights as float64; a trailer carries the downgrade flag u8 and
        the fit sample count u64.
        """
        header = _HEADER.pack(_KIND_TAGS[self.kind], self.n_components, self.feature_dim)
        body = np.concatenate([self.means.ravel(), self.variances.ravel(), self.weights]).astype("<f8")
        trailer = _TRAILER.pack(int(self.downgraded), int(self.fit_sample_count))
        return header + body.tobytes() + trailer

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> tuple["GeneratorParams", int]:
        """Parse one record starting at `offset`; returns the record and the offset after it."""
        if len(data) - offset < _HEADER.size:
            raise ContractViolation(f"Truncated generator record header at offset {offset}")
        tag, k, d = _HEADER.unpack_from(data, offset)
        if tag not in _TAG_KINDS:
            raise ContractViolation(f"Unknown generator kind tag {tag} at offset {offset}")
        start = offset + _HEADER.size
        n_values = 2 * k * d + k
        body_end = start + 8 * n_values
        end = body_end + _TRAILER.size
        if len(data) < end:
            raise ContractViolation(f"Truncated generator record body at offset {start}")
        values = np.frombuffer(data, dtype="<f8", count=n_values, offset=start).astype(np.float64)
        downgraded, fit_count = _TRAILER.unpack_from(data, body_end)
        params = cls(
            kind=_TAG_KINDS[tag],
            means=values[: k * d].reshape(k, d),
            variances=values[k * d : 2 * k * d].reshape(k, d),
            weights=values[2 * k * d :],
            fit_sample_count=int(fit_count),
            downgraded=bool(downgraded),
        )
        return params, end

    @classmethod
    def from_bytes(cls, data: bytes) -> "GeneratorParams":
        params, end = cls.decode(data)
        if end != len(data):
            raise ContractViolation(f"Trailing bytes after generator record at offset {end}")
        return params

    def allclose(self, other: "GeneratorParams", atol: float = 0.0) -> bool:
        return (
            self.kind == other.kind
            and self.means.shape == other.means.shape
            and np.allclose(self.means, other.means, rtol=0, atol=atol)
            and np.allclose(self.variances, other.variances, rtol=0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class AuxiliaryModel:
    """Class id -> generator sub-model."""

    submodels: Mapping[int, GeneratorParams] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "submodels", MappingProxyType(dict(sorted(self.submodels.items()))))

    def get(self, class_id: int) -> Optional[GeneratorParams]:
        return self.submodels.get(int(class_id))

    def __contains__(self, class_id: object) -> bool:
        return class_id in self.submodels

    def classes(self) -> frozenset[int]:
        return frozenset(self.submodels)

    def with_updates(self, updates: Mapping[int, GeneratorParams]) -> "AuxiliaryModel":
        """New model with `updates` overriding existing sub-models."""
        merged = dict(self.submodels)
        merged.update(updates)
        return AuxiliaryModel(merged)


@dataclass(frozen=True)
class ReconstructionPlan:
    """
    Synthetic sample counts that rebuild the cumulative label distribution.

    Attributes:
        generate_counts: Samples to draw per class
        scale_factor: Shrink ratio applied to the cumulative counts
        reference_class: Current-task class whose real count fixes the scale (-1 for empty plans)
        cap: Upper bound on any class's count (largest current real count)
    """

    generate_counts: LabelCountVector
    scale_factor: float
    reference_class: int
    cap: int

    @classmethod
    def empty(cls) -> "ReconstructionPlan":
        return cls(LabelCountVector(), 1.0, -1, 0)

    def total(self) -> int:
        return self.generate_counts.total()
