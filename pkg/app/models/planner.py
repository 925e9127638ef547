from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from app.models.world import ACTION_BOUND, GRIP_BOUND, VideoClip, WorldState

Bounds = Tuple[float, float, float]


class DynamicsMode(str, Enum):
    ORACLE = "oracle"
    LEARNED = "learned"


class PlannerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    G: PositiveInt = 100
    H: PositiveInt = 20
    rounds: PositiveInt = 3
    top_k: PositiveInt = 5
    cem_iters: PositiveInt = 1
    elite_count: PositiveInt = 20
    action_low: Bounds = (-ACTION_BOUND, -ACTION_BOUND, -GRIP_BOUND)
    action_high: Bounds = (ACTION_BOUND, ACTION_BOUND, GRIP_BOUND)
    seed: int = 0

    @model_validator(mode="after")
    def validate_counts(self):
        if self.top_k > self.G:
            raise ValueError("top_k must not exceed G")
        if self.elite_count > self.G:
            raise ValueError("elite_count must not exceed G")
        if any(lo > hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("action_low must not exceed action_high")
        return self


PLANNER_PRESETS: Dict[str, Dict[str, Any]] = {
    "random_shooting": {},
    "cem_robot": {"cem_iters": 2, "elite_count": 20, "H": 10, "rounds": 1},
}


class ActionDistribution(BaseModel):
    """Uniform over bounds when `mean` is unset, otherwise a clamped Gaussian."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    low: np.ndarray
    high: np.ndarray
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    @classmethod
    def uniform(cls, config: PlannerConfig) -> "ActionDistribution":
        return cls(low=np.asarray(config.action_low, float), high=np.asarray(config.action_high, float))


@dataclass
class Predictions:
    """Predicted futures for a batch of candidates: frames (G, H, H_px, W_px, 3).

    `context` is the last observed frame the futures continue from; `origin`
    is the first state of the episode, set only for ground-truth scoring.
    """

    frames: np.ndarray
    states: Optional[List[Tuple[WorldState, ...]]] = None
    context: Optional[np.ndarray] = None
    origin: Optional[WorldState] = None

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def candidate_frames(self, index: int) -> np.ndarray:
        if self.context is None:
            return self.frames[index]
        return np.concatenate([self.context[None], self.frames[index]], axis=0)


@dataclass
class PlanResult:
    actions: np.ndarray
    chosen_index: int
    scores: np.ndarray
    predicted_clip: VideoClip
    round: int = 0

    @property
    def chosen_score(self) -> float:
        return float(self.scores[self.chosen_index])

    def trace_entry(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "candidate_scores_summary": {
                "min": float(np.min(self.scores)),
                "median": float(np.median(self.scores)),
                "max": float(np.max(self.scores)),
            },
            "chosen_index": self.chosen_index,
            "chosen_score": self.chosen_score,
        }


@dataclass
class EpisodeResult:
    states: Tuple[WorldState, ...]
    success: bool
    plans: List[PlanResult] = field(default_factory=list)
    clip: Optional[VideoClip] = None

    @property
    def n_actions(self) -> int:
        return len(self.states) - 1


class EpisodeTrace(BaseModel):
    task: str
    tier: int
    dynamics_mode: DynamicsMode
    seed: int
    success: bool
    rounds: List[Dict[str, Any]] = Field(default_factory=list)
    provenance: Dict[str, Any] = Field(default_factory=dict)
