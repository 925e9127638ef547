from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from app.models.world import Domain, TaskSpec, VideoClip

MANIFEST_VERSION = 1


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


class ClipRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    clip_path: str = Field(..., min_length=1)
    task_id: int = Field(..., ge=0)
    domain: Domain
    env_tier: int = Field(default=0, ge=0, le=3)
    n_frames: PositiveInt
    seed: Optional[int] = Field(default=None, ge=0)


class Manifest(BaseModel):
    version: int = MANIFEST_VERSION
    split: Split = Split.TRAIN
    generation_seed: int = 0
    tasks: List[TaskSpec] = Field(default_factory=list)
    records: List[ClipRecord] = Field(default_factory=list)
    provenance: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_registry(self):
        ids = [t.task_id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise ValueError("task ids must be unique within a manifest registry")
        paths = [r.clip_path for r in self.records]
        if len(paths) != len(set(paths)):
            raise ValueError("clip paths must be unique within a manifest")
        known = set(ids)
        for record in self.records:
            if record.task_id not in known:
                raise ValueError(
                    f"record {record.clip_path} references unknown task {record.task_id}"
                )
        return self

    def task_ids(self) -> List[int]:
        return sorted({r.task_id for r in self.records})

    def records_for(self, task_id: int) -> List[ClipRecord]:
        return [r for r in self.records if r.task_id == task_id]


class AugmentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rotation_range_deg: float = Field(default=15.0, ge=0.0)
    crop_frac: float = Field(default=0.9, gt=0.0, le=1.0)
    enabled: bool = True


class WindowSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    min_len: PositiveInt = 20
    max_len: PositiveInt = 40

    @model_validator(mode="after")
    def validate_bounds(self):
        if self.min_len > self.max_len:
            raise ValueError("min_len must not exceed max_len")
        return self


@dataclass
class Triplet:
    anchor: VideoClip
    positive: VideoClip
    negative: VideoClip
