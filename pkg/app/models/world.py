import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

Point = Tuple[float, float]

ACTION_BOUND = 0.02
GRIP_BOUND = 1.0


class Domain(str, Enum):
    ROBOT = "robot"
    HUMAN = "human"


class PredicateKind(str, Enum):
    DRAWER_CLOSE = "drawer_close"
    DRAWER_OPEN = "drawer_open"
    FAUCET_RIGHT = "faucet_right"
    FAUCET_LEFT = "faucet_left"
    CUP_AWAY = "cup_away"
    CUP_TOWARD = "cup_toward"
    PUSH_LEFT = "push_left"
    PUSH_RIGHT = "push_right"
    NO_MOTION = "no_motion"
    LIFT_UP = "lift_up"
    MOVE_DOWN = "move_down"
    POKE = "poke"


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: int = Field(..., ge=0)
    name: str = Field(..., min_length=1)
    predicate_kind: PredicateKind
    threshold: float


class ViewTransform(BaseModel):
    model_config = ConfigDict(frozen=True)

    rotation: float = Field(default=0.0, ge=-0.35, le=0.35)
    tx: float = 0.0
    ty: float = 0.0
    scale: float = Field(default=1.0, ge=0.8, le=1.2)

    def is_identity(self) -> bool:
        return self.rotation == 0.0 and self.tx == 0.0 and self.ty == 0.0 and self.scale == 1.0


class DomainSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    embodiment: Domain = Domain.ROBOT
    palette_id: int = Field(default=0, ge=0)
    view: ViewTransform = Field(default_factory=ViewTransform)
    arrangement: Tuple[int, int, int] = (0, 1, 2)
    texture_seed: int = Field(default=0, ge=0)

    @field_validator("arrangement")
    @classmethod
    def validate_arrangement(cls, v):
        if sorted(v) != [0, 1, 2]:
            raise ValueError(f"arrangement {v} is not a permutation of object slots")
        return tuple(v)


ALL_ARRANGEMENTS = tuple(itertools.permutations(range(3)))


@dataclass(frozen=True)
class ActionVec:
    dx: float = 0.0
    dy: float = 0.0
    grip: float = 0.0

    def clamped(self) -> "ActionVec":
        return ActionVec(
            dx=float(np.clip(self.dx, -ACTION_BOUND, ACTION_BOUND)),
            dy=float(np.clip(self.dy, -ACTION_BOUND, ACTION_BOUND)),
            grip=float(np.clip(self.grip, -GRIP_BOUND, GRIP_BOUND)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.grip], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "ActionVec":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class WorldState:
    gripper_pos: Point
    grip_closed: bool
    drawer_openness: float
    faucet_angle: float
    cup_pos: Point
    machine_pos: Point
    drawer_pos: Point
    faucet_pos: Point
    distractor_pos: Tuple[Point, ...] = ()
    time: int = 0

    @property
    def drawer_handle(self) -> Point:
        return (self.drawer_pos[0] + self.drawer_openness, self.drawer_pos[1])

    @property
    def faucet_handle(self) -> Point:
        return (self.faucet_pos[0] + self.faucet_angle, self.faucet_pos[1])

    def evolve(self, **changes) -> "WorldState":
        return replace(self, **changes)


@dataclass
class VideoClip:
    frames: np.ndarray
    task_id: Optional[int] = None
    domain: Domain = Domain.ROBOT
    env_tier: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"frames must have shape (n, H, W, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("a clip needs at least one frame")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        self.frames = frames.astype(np.float32, copy=False)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def frame_size(self) -> Tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])

    def with_frames(self, frames: np.ndarray) -> "VideoClip":
        return VideoClip(
            frames=frames,
            task_id=self.task_id,
            domain=self.domain,
            env_tier=self.env_tier,
            meta=dict(self.meta),
        )
