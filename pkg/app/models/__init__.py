"""
Domain value types
Immutable in-memory values exchanged between clients, the server and the orchestrator
"""

from app.models.batch import LabeledBatch
from app.models.dataset import DatasetStore, TaskSpec, TaskStream
from app.models.federation import CachedGenerator, ClientState, RoundAggregate, RoundUpload, ServerCache
from app.models.generator import AuxiliaryModel, FitBudget, GeneratorKind, GeneratorParams, ReconstructionPlan
from app.models.labels import LabelCountVector
from app.models.params import AggregationWeights, ParamVector

__all__ = [
    "AggregationWeights",
    "AuxiliaryModel",
    "CachedGenerator",
    "ClientState",
    "DatasetStore",
    "FitBudget",
    "GeneratorKind",
    "GeneratorParams",
    "LabelCountVector",
    "LabeledBatch",
    "ParamVector",
    "ReconstructionPlan",
    "RoundAggregate",
    "RoundUpload",
    "ServerCache",
    "TaskSpec",
    "TaskStream",
]
