import hashlib
import json
from typing import List

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from app.models.bench import TARGET_TASK_NAMES, ExperimentSpec
from app.models.data import AugmentSpec, WindowSpec
from app.models.planner import PlannerConfig
from app.models.training import DynConfig, PretrainConfig, TrainConfig
from app.models.world import PredicateKind

ALL_TASK_NAMES = [kind.value for kind in PredicateKind]


def _known_tasks(names: List[str]) -> List[str]:
    unknown = [n for n in names if n not in ALL_TASK_NAMES]
    if unknown:
        raise ValueError(f"unknown tasks: {', '.join(unknown)}")
    if len(set(names)) != len(names):
        raise ValueError("task lists must not repeat a task")
    return names


class WorldConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_size: int = Field(default=32, ge=16, le=64)
    demo_noise: float = Field(default=0.02, ge=0.0)
    max_demo_attempts: int = Field(default=20, ge=1, le=20)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    human_tasks: List[str] = Field(default_factory=lambda: list(ALL_TASK_NAMES))
    robot_tasks: List[str] = Field(default_factory=lambda: list(TARGET_TASK_NAMES))
    human_clips_per_task: int = Field(default=200, ge=1, le=1500)
    robot_demos_per_task: int = Field(default=120, ge=1, le=1500)
    val_fraction: float = Field(default=0.15, gt=0.0, lt=1.0)
    frames_per_clip: PositiveInt = 16
    window: WindowSpec = Field(default_factory=WindowSpec)
    augment: AugmentSpec = Field(default_factory=AugmentSpec)

    @field_validator("human_tasks", "robot_tasks")
    @classmethod
    def validate_tasks(cls, v):
        return _known_tasks(v)

    @model_validator(mode="after")
    def validate_nonempty(self):
        if not self.human_tasks and not self.robot_tasks:
            raise ValueError("data generation needs at least one task")
        return self


class RunConfig(BaseModel):
    """Resolved configuration of one pipeline run; every section has defaults."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, ge=0)
    world: WorldConfig = Field(default_factory=WorldConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    encoder_pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    dvd_train: TrainConfig = Field(default_factory=TrainConfig)
    dynamics: DynConfig = Field(default_factory=DynConfig)
    planner: PlannerConfig = Field(default_factory=PlannerConfig)
    experiment: ExperimentSpec = Field(default_factory=ExperimentSpec)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
