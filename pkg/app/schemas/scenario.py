"""
Scenario schemas
Describe how each client's task stream evolves over federated rounds
"""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ScenarioKind(str, Enum):
    """Task-stream families."""

    GRADUAL = "gradual"  # two-task loop, one member replaced every `replace_every` tasks
    CIRCULATING = "circulating"  # all client tasks repeated as a cycle
    CLASS_INCREMENTAL = "class_incremental"  # every class exactly once
    OVERLAP_SWEEP = "overlap_sweep"  # sliding class windows, adjacent tasks share `overlap` classes


class ScenarioConfig(BaseModel):
    """
    Scenario parameters.

    Attributes:
        kind: Task-stream family
        num_clients: Number of participating clients
        num_classes: Number of classes in the dataset
        classes_per_task: Classes per task; overlap_sweep forces overlap + 2
        tasks_per_client: Distinct tasks per client (gradual / circulating)
        samples_per_class: Training samples per class in one task
        loop_size: Tasks in the gradual loop
        replace_every: Executed tasks between loop replacements (gradual)
        overlap: Classes shared by adjacent tasks (overlap_sweep)
        total_rounds: Number of federated rounds; optional for class_incremental
        seed: Seed for all task-assignment randomness
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ScenarioKind = Field(default=ScenarioKind.CLASS_INCREMENTAL, description="Task-stream family")
    num_clients: int = Field(default=10, ge=1, description="Number of clients")
    num_classes: int = Field(default=10, ge=2, description="Number of dataset classes")
    classes_per_task: Optional[int] = Field(default=None, ge=1, description="Classes in each task (default 2)")
    tasks_per_client: Optional[int] = Field(default=None, ge=1, description="Distinct tasks per client")
    samples_per_class: int = Field(default=200, ge=1, description="Training samples per class per task")
    loop_size: int = Field(default=2, ge=1, description="Tasks in the gradual loop")
    replace_every: int = Field(default=30, ge=1, description="Executed tasks between loop replacements")
    overlap: int = Field(default=0, description="Classes shared by adjacent tasks (0, 2, 4 or 6)")
    total_rounds: Optional[int] = Field(default=None, ge=1, description="Federated rounds")
    seed: int = Field(default=0, ge=0, description="Task assignment seed")

    @model_validator(mode="after")
    def _check_consistency(self) -> "ScenarioConfig":
        if self.overlap not in (0, 2, 4, 6):
            raise ValueError("overlap must be one of 0, 2, 4, 6")
        if self.kind == ScenarioKind.OVERLAP_SWEEP:
            if self.classes_per_task is not None and self.classes_per_task != self.overlap + 2:
                raise ValueError("overlap_sweep tasks have exactly overlap + 2 classes")
            if self.num_classes % 2:
                raise ValueError("overlap_sweep needs an even number of classes")
        elif self.overlap:
            raise ValueError("overlap is only meaningful for overlap_sweep")
        if self.task_width > self.num_classes:
            raise ValueError("classes_per_task exceeds num_classes")
        if self.kind in (ScenarioKind.GRADUAL, ScenarioKind.CIRCULATING):
            if self.task_count * self.task_width > self.num_classes:
                raise ValueError("not enough classes for disjoint tasks")
        if self.kind == ScenarioKind.GRADUAL and self.task_count <= self.loop_size:
            raise ValueError("gradual scenario needs more tasks than loop members to replace one")
        if self.kind != ScenarioKind.CLASS_INCREMENTAL and self.total_rounds is None:
            raise ValueError(f"total_rounds is required for the {self.kind.value} scenario")
        return self

    @property
    def task_width(self) -> int:
        """Resolved number of classes per task."""
        if self.kind == ScenarioKind.OVERLAP_SWEEP:
            return self.overlap + 2
        return self.classes_per_task or 2

    @property
    def task_count(self) -> int:
        """Resolved number of distinct tasks per client."""
        if self.kind == ScenarioKind.OVERLAP_SWEEP:
            # windows advance two classes at a time around a cyclic class order
            return self.num_classes // 2
        if self.kind == ScenarioKind.CLASS_INCREMENTAL:
            # a final smaller task takes any remainder so every class appears once
            return -(-self.num_classes // self.task_width)
        return self.tasks_per_client or self.num_classes // self.task_width
