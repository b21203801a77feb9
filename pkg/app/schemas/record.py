"""
Run result schemas
What a finished run records and how runs are summarized across seeds
"""
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.run import MethodId
from app.schemas.scenario import ScenarioConfig


class RunRecord(BaseModel):
    """
    Outcome of one (method, scenario, seed) run.

    Attributes:
        method: Federated method
        scenario: Scenario the streams were built from
        seed: Run seed
        iaa: IAA after each round
        accuracies: Per round, each client's accuracy on its cumulative test set
        data_counts: Per round, each client's cumulative real training count
        aggregation_weights: Per round, each client's collaboration weights (personalized methods)
        phase_seconds: Wall-clock seconds per phase; not serialized
    """

    model_config = ConfigDict(extra="forbid")

    method: MethodId
    scenario: ScenarioConfig
    seed: int = Field(..., ge=0)
    iaa: list[float] = Field(default_factory=list, description="IAA per round")
    accuracies: list[list[float]] = Field(default_factory=list, description="Client accuracy per round")
    data_counts: list[list[int]] = Field(default_factory=list, description="Client data count per round")
    aggregation_weights: list[list[list[float]]] = Field(
        default_factory=list, description="Client collaboration weights per round"
    )
    phase_seconds: dict[str, float] = Field(default_factory=dict, exclude=True)

    @model_validator(mode="after")
    def _check_rounds(self) -> "RunRecord":
        if len(self.accuracies) != len(self.iaa) or len(self.data_counts) != len(self.iaa):
            raise ValueError("accuracies and data_counts need one row per IAA entry")
        return self

    @property
    def run_name(self) -> str:
        return f"{self.method.value}_seed{self.seed}"


class MetricSummary(BaseModel):
    """AA and AFM of one IAA series."""

    iaa_series: list[float]
    aa: float
    afm: float = Field(..., ge=0)


class SeedMetrics(BaseModel):
    aa: float
    afm: float


class MethodSummary(BaseModel):
    """
    Per-method aggregate across seeds.

    Standard deviations are sample standard deviations and are None for a single seed.
    """

    scenario: str
    runs: dict[str, SeedMetrics] = Field(..., description="Metrics keyed by seed")
    aa_mean: float
    aa_std: Optional[float] = None
    afm_mean: float
    afm_std: Optional[float] = None
