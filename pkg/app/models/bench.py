import hashlib
import json
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, field_validator, model_validator

from app.models.planner import DynamicsMode
from app.models.training import BCConfig

TARGET_TASK_NAMES = ["drawer_close", "faucet_right", "cup_away"]


class MethodKind(str, Enum):
    DVD = "dvd"
    DVD_ROBOT_ONLY = "dvd_robot_only"
    RANDOM = "random"
    BC = "bc"
    CLASSIFIER_REWARD = "classifier_reward"
    PROGRESS = "progress"


class DemoSource(str, Enum):
    HUMAN = "human"
    ROBOT = "robot"


class ExperimentKind(str, Enum):
    ENV_GEN = "env-gen"
    TASK_GEN = "task-gen"
    ABLATION = "ablation"
    BASELINES = "baselines"


class MethodSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method_kind: MethodKind
    human_task_count: NonNegativeInt = 0
    robot_demos_per_task: PositiveInt = 120
    demo_source: DemoSource = DemoSource.HUMAN
    label: Optional[str] = None

    @property
    def uses_dvd(self) -> bool:
        return self.method_kind in (MethodKind.DVD, MethodKind.DVD_ROBOT_ONLY)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.method_kind == MethodKind.DVD_ROBOT_ONLY:
            name = "robot_only"
        elif self.method_kind == MethodKind.DVD:
            name = f"robot+{self.human_task_count}_human"
        else:
            return self.method_kind.value
        if self.robot_demos_per_task != 120:
            name += f"@{self.robot_demos_per_task}"
        if self.demo_source == DemoSource.ROBOT:
            name += "(robot_demo)"
        return name


class ExperimentSpec(BaseModel):
    """Declarative benchmark definition.

    Empty `methods` selects the experiment kind's default matrix.
    `train_robot_tasks` of None means the target tasks for env-gen/ablation
    and the held-out robot tasks for task-gen.
    """

    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    kind: ExperimentKind = ExperimentKind.ENV_GEN
    methods: List[MethodSpec] = Field(default_factory=list)
    tiers: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    target_tasks: List[str] = Field(default_factory=lambda: list(TARGET_TASK_NAMES), min_length=1)
    train_robot_tasks: Optional[List[str]] = None
    trials: PositiveInt = 50
    seeds: PositiveInt = 3
    dynamics_mode: DynamicsMode = DynamicsMode.ORACLE
    budgets: List[PositiveInt] = Field(default_factory=lambda: [120, 40, 20], min_length=1)
    include_composite: bool = False
    jobs: PositiveInt = 1
    bc: BCConfig = Field(default_factory=BCConfig)

    @model_validator(mode="after")
    def default_name(self):
        if self.name is None:
            self.name = self.kind.value
        return self

    @field_validator("tiers")
    @classmethod
    def validate_tiers(cls, v):
        for tier in v:
            if not 0 <= tier <= 3:
                raise ValueError(f"unknown tier {tier}; tiers range over 0..3")
        return sorted(set(v))

    def spec_digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResultCell(BaseModel):
    method: str
    human_task_count: NonNegativeInt = 0
    robot_demos: NonNegativeInt = 0
    tier: int = Field(..., ge=0, le=3)
    task: str
    seed: int
    trials: PositiveInt
    # None marks an n/a cell (task outside the scorer's class set).
    successes: Optional[NonNegativeInt] = None
    dynamics_mode: DynamicsMode = DynamicsMode.ORACLE
    label: Optional[str] = None

    @property
    def success_rate(self) -> Optional[float]:
        if self.successes is None:
            return None
        return self.successes / self.trials

    def key(self) -> tuple:
        return (self.method, self.tier, self.task, self.seed)


class AggregateRow(BaseModel):
    method: str
    tier: Optional[int] = None
    task: str = "all"
    mean: Optional[float] = None
    se: Optional[float] = None
    n_seeds: int = 0


class ResultsTable(BaseModel):
    experiment: str
    spec_digest: str
    cells: List[ResultCell] = Field(default_factory=list)
    aggregates: List[AggregateRow] = Field(default_factory=list)
    # Per-epoch DVD training curves by method name.
    curves: Dict[str, List[Dict[str, float]]] = Field(default_factory=dict)
    provenance: Dict[str, Any] = Field(default_factory=dict)

    def methods(self) -> List[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultsTable":
        return cls.model_validate_json(text)
