from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerConfig(_Section):
    learning_rate: PositiveFloat = 0.01
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-5, ge=0.0)


class PretrainConfig(_Section):
    """K-way task classification used to pretrain the video encoder."""

    epochs: PositiveInt = 10
    steps_per_epoch: PositiveInt = 50
    batch_size: PositiveInt = 24
    embedding_dim: PositiveInt = 64
    widths: List[PositiveInt] = Field(default_factory=lambda: [8, 16, 32], min_length=1)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)


class TrainConfig(_Section):
    """Similarity-head training on pair cross-entropy with a frozen encoder.

    `human_tasks`/`robot_tasks` select from the manifests (None keeps every
    task present); `robot_demos_per_task` truncates each robot task to its
    first N demos.
    """

    epochs: PositiveInt = 30
    steps_per_epoch: PositiveInt = 200
    batch_size: PositiveInt = 24
    hidden: List[PositiveInt] = Field(default_factory=lambda: [64, 32], min_length=1)
    human_tasks: Optional[List[str]] = None
    robot_tasks: Optional[List[str]] = None
    robot_demos_per_task: Optional[PositiveInt] = None
    views_per_clip: int = Field(default=8, ge=0)
    val_pairs: PositiveInt = 400
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)


class DynConfig(_Section):
    context_frames: PositiveInt = 5
    predict_frames: PositiveInt = 15
    rollout_limit: PositiveInt = 20
    latent_dim: PositiveInt = 64
    transition_hidden: PositiveInt = 128
    widths: List[PositiveInt] = Field(default_factory=lambda: [16, 32], min_length=2, max_length=2)
    n_episodes: PositiveInt = 500
    episode_length: int = Field(default=60, ge=1, le=60)
    epochs: PositiveInt = 20
    steps_per_epoch: PositiveInt = 50
    batch_size: PositiveInt = 16
    holdout_episodes: int = Field(default=20, ge=1)
    optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(learning_rate=0.05, weight_decay=0.0)
    )

    @model_validator(mode="after")
    def validate_horizons(self):
        if self.rollout_limit < self.predict_frames:
            raise ValueError("rollout_limit must be at least predict_frames")
        if self.episode_length < self.context_frames + self.predict_frames:
            raise ValueError("episode_length must cover context_frames + predict_frames")
        return self


class BCConfig(_Section):
    hidden: List[PositiveInt] = Field(default_factory=lambda: [128, 64, 32], min_length=1)
    epochs: PositiveInt = 10
    steps_per_epoch: PositiveInt = 100
    batch_size: PositiveInt = 32
    robot_demo_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
