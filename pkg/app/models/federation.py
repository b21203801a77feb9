"""
Client and server state exchanged during federated rounds
All values are immutable; a round produces new values instead of mutating old ones
"""
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Optional

from app.models.batch import LabeledBatch
from app.models.generator import AuxiliaryModel, FitBudget, GeneratorParams
from app.models.labels import LabelCountVector
from app.models.params import AggregationWeights, ParamVector


def _proxy(mapping: Mapping) -> Mapping:
    return MappingProxyType(dict(sorted(mapping.items())))


@dataclass(frozen=True, eq=False)
class ClientState:
    """
    Everything a client carries between rounds.

    Attributes:
        client_id: Client index
        y_cum: Cumulative real-sample counts per class
        aux: Category-decoupled auxiliary model
        cumulative_test: Test shards of every task seen so far
        last_personalized: Personalized model received after the previous round
        coupled: Single all-class generator (coupled-generator ablation only)
    """

    client_id: int
    y_cum: LabelCountVector = field(default_factory=LabelCountVector)
    aux: AuxiliaryModel = field(default_factory=AuxiliaryModel)
    cumulative_test: LabeledBatch = field(default_factory=LabeledBatch.empty)
    last_personalized: Optional[ParamVector] = None
    coupled: Optional[GeneratorParams] = None

    @property
    def seen_classes(self) -> frozenset[int]:
        return self.y_cum.support()

    @property
    def data_count(self) -> int:
        """Real training samples encountered so far."""
        return self.y_cum.total()

    def with_test_shard(self, shard: LabeledBatch) -> "ClientState":
        return replace(self, cumulative_test=LabeledBatch.concat([self.cumulative_test, shard]))

    def with_personalized(self, model: ParamVector) -> "ClientState":
        return replace(self, last_personalized=model)


@dataclass(frozen=True, eq=False)
class RoundUpload:
    """
    What a client sends to the server after local training.

    Attributes:
        client_id: Sender
        theta_star: Locally optimal task-model parameters
        updated_submodels: Sub-models retrained this round (current-task classes only)
        label_counts: Cumulative label distribution of the client
        train_size: Rows in the local training set, replay included
        fit_budgets: Budget each updated sub-model was trained with
        coupled_generator: All-class generator (coupled-generator ablation only)
    """

    client_id: int
    theta_star: ParamVector
    updated_submodels: Mapping[int, GeneratorParams] = field(default_factory=dict)
    label_counts: LabelCountVector = field(default_factory=LabelCountVector)
    train_size: int = 0
    fit_budgets: Mapping[int, FitBudget] = field(default_factory=dict)
    coupled_generator: Optional[GeneratorParams] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "updated_submodels", _proxy(self.updated_submodels))
        object.__setattr__(self, "fit_budgets", _proxy(self.fit_budgets))

    def with_theta(self, theta: ParamVector) -> "RoundUpload":
        return replace(self, theta_star=theta)


@dataclass(frozen=True, eq=False)
class CachedGenerator:
    """A class's newest uploaded sub-model and where it came from."""

    params: GeneratorParams
    round_index: int
    client_id: int


@dataclass(frozen=True, eq=False)
class ServerCache:
    """
    Server-side mirrors of client uploads.

    Attributes:
        round_index: Last merged round (0 before the first merge)
        thetas: Latest theta_star per client
        mirrors: Auxiliary model mirror per client
        class_cache: Newest sub-model per class across clients
        label_counts: Latest cumulative label distribution per client
        coupled: Latest coupled generator per client (coupled-generator ablation only)
    """

    round_index: int = 0
    thetas: Mapping[int, ParamVector] = field(default_factory=dict)
    mirrors: Mapping[int, AuxiliaryModel] = field(default_factory=dict)
    class_cache: Mapping[int, CachedGenerator] = field(default_factory=dict)
    label_counts: Mapping[int, LabelCountVector] = field(default_factory=dict)
    coupled: Mapping[int, GeneratorParams] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("thetas", "mirrors", "class_cache", "label_counts", "coupled"):
            object.__setattr__(self, name, _proxy(getattr(self, name)))


@dataclass(frozen=True, eq=False)
class RoundAggregate:
    """
    Result of one server aggregation.

    Attributes:
        client_ids: Clients in upload order (ascending id)
        personalized: Personalized model per client, aligned with client_ids
        weights: Optimized collaboration weights per client, aligned with client_ids
        global_mean: Unweighted mean of all uploaded models
        cache: Server cache after merging this round's uploads
    """

    client_ids: tuple[int, ...]
    personalized: tuple[ParamVector, ...]
    weights: tuple[AggregationWeights, ...]
    global_mean: ParamVector
    cache: ServerCache

    def personalized_for(self, client_id: int) -> ParamVector:
        return self.personalized[self.client_ids.index(client_id)]
