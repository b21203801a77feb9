"""
Experiment configuration schemas
The JSON run document and the per-client settings derived from it
Reference: https://docs.pydantic.dev/latest/concepts/models/
"""
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, model_validator

from app.models.generator import VARIANCE_FLOOR, GeneratorKind
from app.schemas.model import Activation, ModelArch, SgdConfig
from app.schemas.scenario import ScenarioConfig


class MethodId(str, Enum):
    """Federated methods the orchestrator can run."""

    PFEDGRP = "pfedgrp"
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDAVG_REPLAY = "fedavg_replay"
    PFEDGRP_ASG = "pfedgrp_asg"  # global init, replay, no alignment
    PFEDGRP_ASP = "pfedgrp_asp"  # personalized init, replay, no alignment
    PFEDGRP_AS1 = "pfedgrp_as1"  # one coupled generator for all classes


class FedAvgWeighting(str, Enum):
    """How FedAvg-family methods weight client models."""

    DATA_SIZE = "data_size"
    UNIFORM = "uniform"


class DatasetSource(str, Enum):
    SYNTHETIC = "synthetic"
    IDX = "idx"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetConfig(_Section):
    """
    Where the samples come from.

    Synthetic pools are sized from the task streams, so every requested slice exists.

    Attributes:
        source: synthetic Gaussian blobs or an IDX file set
        feature_dim: Synthetic feature dimension
        class_separation: Synthetic lattice spacing
        test_ratio: Synthetic test pool size relative to the train pool
        train_images: IDX training images
        train_labels: IDX training labels
        test_images: IDX test images
        test_labels: IDX test labels
    """

    source: DatasetSource = Field(default=DatasetSource.SYNTHETIC, description="Sample source")
    feature_dim: int = Field(default=8, gt=0, description="Synthetic feature dimension")
    class_separation: float = Field(default=4.0, ge=0, description="Synthetic class-centre spacing")
    test_ratio: float = Field(default=0.5, gt=0, description="Synthetic test/train pool ratio")
    train_images: Optional[Path] = Field(default=None, description="IDX training images")
    train_labels: Optional[Path] = Field(default=None, description="IDX training labels")
    test_images: Optional[Path] = Field(default=None, description="IDX test images")
    test_labels: Optional[Path] = Field(default=None, description="IDX test labels")

    @model_validator(mode="after")
    def _check_paths(self) -> "DatasetConfig":
        if self.source == DatasetSource.IDX and None in self.idx_paths:
            raise ValueError("idx source needs train_images, train_labels, test_images and test_labels")
        return self

    @property
    def idx_paths(self) -> tuple[Optional[Path], ...]:
        return (self.train_images, self.train_labels, self.test_images, self.test_labels)


class ModelSection(_Section):
    """Hidden layers of the task model; input and output sizes come from the dataset."""

    hidden_dims: tuple[int, ...] = Field(default=(64, 64), description="Hidden layer widths")
    activation: Activation = Field(default=Activation.RELU, description="Hidden-layer activation")

    def arch(self, input_dim: int, num_classes: int) -> ModelArch:
        return ModelArch(
            input_dim=input_dim,
            hidden_dims=self.hidden_dims,
            num_classes=num_classes,
            activation=self.activation,
        )


class GeneratorConfig(_Section):
    """
    Per-class density sub-model settings.

    Attributes:
        kind: diag_gaussian (closed form) or gmm (EM)
        n_components: Mixture components for gmm
        variance_floor: Lower bound on every variance
        init_iterations: EM iterations of a cold-start fit
        transfer_iterations: EM iterations of a warm-start fit
    """

    kind: GeneratorKind = Field(default=GeneratorKind.GMM, description="Density model family")
    n_components: int = Field(default=3, ge=1, description="Mixture components")
    variance_floor: float = Field(default=VARIANCE_FLOOR, gt=0, description="Variance lower bound")
    init_iterations: int = Field(default=50, ge=0, description="EM iterations from k-means++ seeding")
    transfer_iterations: int = Field(default=5, ge=0, description="EM iterations from a warm start")


class WeightOptConfig(_Section):
    """
    Personalized aggregation weight optimization.

    Attributes:
        steps: Full-batch gradient steps on the softmax logits
        step_size: Initial step size
        max_backoff: Halvings tried before a step is skipped
        step_growth: Step-size multiplier after an accepted step
    """

    steps: int = Field(default=20, ge=0, description="Gradient steps")
    step_size: float = Field(default=0.1, gt=0, description="Initial step size")
    max_backoff: int = Field(default=10, ge=0, description="Step halvings per step")
    step_growth: float = Field(default=1.0, ge=1.0, description="Growth after an accepted step")


class PoisonConfig(_Section):
    """Replace one client's upload with Gaussian noise every round."""

    client_id: int = Field(..., ge=0, description="Poisoned client")
    noise_std: float = Field(default=1.0, gt=0, description="Noise standard deviation")


class ClientConfig(_Section):
    """Settings a client needs for one local round."""

    arch: ModelArch
    sgd: SgdConfig = Field(default_factory=SgdConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    lambda_align: float = Field(default=0.1, ge=0, description="Alignment loss weight")
    prox_mu: float = Field(default=0.01, ge=0, description="FedProx coefficient")
    replay_enabled: bool = Field(default=True, description="Generate replay data")


class RunConfig(_Section):
    """
    Experiment document.

    Every key is optional; unknown keys are rejected.
    """

    methods: list[MethodId] = Field(default=[MethodId.PFEDGRP], min_length=1, description="Methods to run")
    seeds: list[NonNegativeInt] = Field(default=[0], min_length=1, description="Run seeds")
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig, description="Task streams")
    dataset: DatasetConfig = Field(default_factory=DatasetConfig, description="Sample source")
    model: ModelSection = Field(default_factory=ModelSection, description="Task model")
    sgd: SgdConfig = Field(default_factory=SgdConfig, description="Local optimizer")
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig, description="Auxiliary sub-models")
    weight_opt: WeightOptConfig = Field(default_factory=WeightOptConfig, description="Aggregation weights")
    lambda_align: float = Field(default=0.1, ge=0, description="Alignment loss weight")
    prox_mu: float = Field(default=0.01, ge=0, description="FedProx coefficient")
    replay_budget: int = Field(default=512, ge=1, description="Server replay samples per client per round")
    replay_enabled: bool = Field(default=True, description="Generate replay data")
    force_uniform_weights: bool = Field(default=False, description="Skip weight optimization")
    fedavg_weighting: FedAvgWeighting = Field(default=FedAvgWeighting.DATA_SIZE, description="FedAvg weights")
    poison: Optional[PoisonConfig] = Field(default=None, description="Model poisoning experiment")
    output_dir: Path = Field(default=Path("results"), description="Result directory")
    checkpoint_dir: Optional[Path] = Field(
        default=None, description="Write the server cache here after every round of cache-keeping methods"
    )

    @model_validator(mode="after")
    def _check_poison(self) -> "RunConfig":
        if self.poison is not None and self.poison.client_id >= self.scenario.num_clients:
            raise ValueError(f"poison.client_id must be below num_clients ({self.scenario.num_clients})")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        return self

    def client_config(self, arch: ModelArch, method: MethodId) -> ClientConfig:
        """Local-round settings for `method`."""
        return ClientConfig(
            arch=arch,
            sgd=self.sgd,
            generator=self.generator,
            lambda_align=self.lambda_align,
            prox_mu=self.prox_mu if method == MethodId.FEDPROX else 0.0,
            replay_enabled=self.replay_enabled,
        )
