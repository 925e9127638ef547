from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import InsufficientDataError
from app.data.manifest import load_clip
from app.data.transforms import augment, temporal_resample, window_with
from app.models.data import AugmentSpec, Manifest, Triplet, WindowSpec
from app.models.world import Domain, VideoClip

ROBOT_PROB = 0.5
MAX_NEGATIVE_DRAWS = 1000

Entry = Tuple[int, VideoClip]


@dataclass
class ClipPool:
    """In-memory clips indexed by domain and task.

    Entries carry a pool-wide index so that "distinct record" checks do not
    depend on clip contents.
    """

    by_domain: Dict[Domain, List[Entry]] = field(default_factory=dict)
    by_task: Dict[Tuple[Domain, int], List[Entry]] = field(default_factory=dict)

    @classmethod
    def from_clips(cls, clips: List[VideoClip]) -> "ClipPool":
        pool = cls(by_domain=defaultdict(list), by_task=defaultdict(list))
        for index, clip in enumerate(clips):
            if clip.task_id is None:
                raise InsufficientDataError("pool clips need a task label")
            pool.by_domain[clip.domain].append((index, clip))
            pool.by_task[(clip.domain, clip.task_id)].append((index, clip))
        pool.by_domain = dict(pool.by_domain)
        pool.by_task = dict(pool.by_task)
        return pool

    @classmethod
    def from_manifests(
        cls,
        human: Optional[Manifest],
        robot: Optional[Manifest],
        human_root: Optional[Path] = None,
        robot_root: Optional[Path] = None,
    ) -> "ClipPool":
        clips: List[VideoClip] = []
        for manifest, root in ((human, human_root), (robot, robot_root)):
            if manifest is None:
                continue
            clips.extend(load_clip(root or Path("."), record) for record in manifest.records)
        return cls.from_clips(clips)

    def task_ids(self) -> List[int]:
        return sorted({task for (_, task) in self.by_task})

    def domains(self) -> List[Domain]:
        return [d for d in (Domain.ROBOT, Domain.HUMAN) if self.by_domain.get(d)]

    def entries(self, domain: Domain, task_id: Optional[int] = None) -> List[Entry]:
        if task_id is None:
            return self.by_domain.get(domain, [])
        return self.by_task.get((domain, task_id), [])

    def size(self) -> int:
        return sum(len(v) for v in self.by_domain.values())


def _coin_domain(pool: ClipPool, rng: np.random.Generator, task_id: Optional[int] = None) -> Domain:
    """Robot with probability 0.5 when robot clips exist (for `task_id`), else human."""
    robot_ok = bool(pool.entries(Domain.ROBOT, task_id))
    human_ok = bool(pool.entries(Domain.HUMAN, task_id))
    robot = rng.random() < ROBOT_PROB
    if robot and robot_ok or not human_ok:
        return Domain.ROBOT
    return Domain.HUMAN


def _draw(entries: List[Entry], rng: np.random.Generator) -> Entry:
    return entries[int(rng.integers(len(entries)))]


def sample_triplet(pool: ClipPool, rng: np.random.Generator) -> Triplet:
    """Draw (anchor, positive, negative) with the 0.5 robot coin on every slot."""
    if len(pool.task_ids()) < 2:
        raise InsufficientDataError("triplet sampling needs at least two tasks")

    anchor_index, anchor = _draw(pool.entries(_coin_domain(pool, rng)), rng)
    task = anchor.task_id

    positive_domain = _coin_domain(pool, rng, task)
    candidates = [e for e in pool.entries(positive_domain, task) if e[0] != anchor_index]
    if not candidates:
        other = Domain.HUMAN if positive_domain == Domain.ROBOT else Domain.ROBOT
        candidates = [e for e in pool.entries(other, task) if e[0] != anchor_index]
    if not candidates:
        raise InsufficientDataError(
            f"task {task} has a single clip and no cross-domain partner"
        )
    _, positive = _draw(candidates, rng)

    for _ in range(MAX_NEGATIVE_DRAWS):
        _, negative = _draw(pool.entries(_coin_domain(pool, rng)), rng)
        if negative.task_id != task:
            return Triplet(anchor=anchor, positive=positive, negative=negative)
    raise InsufficientDataError(f"could not draw a negative for task {task}")


def process_clip(
    clip: VideoClip,
    window: WindowSpec,
    augment_spec: AugmentSpec,
    frames: int,
    rng: np.random.Generator,
) -> VideoClip:
    clip = window_with(clip, window, rng)
    clip = augment(clip, augment_spec, rng)
    return temporal_resample(clip, frames)


def make_batch(
    pool: ClipPool,
    rng: np.random.Generator,
    batch_size: int = 24,
    window: Optional[WindowSpec] = None,
    augment_spec: Optional[AugmentSpec] = None,
    frames: int = 16,
) -> List[Triplet]:
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    window = window or WindowSpec()
    augment_spec = augment_spec or AugmentSpec()
    batch = []
    for _ in range(batch_size):
        triplet = sample_triplet(pool, rng)
        batch.append(
            Triplet(
                anchor=process_clip(triplet.anchor, window, augment_spec, frames, rng),
                positive=process_clip(triplet.positive, window, augment_spec, frames, rng),
                negative=process_clip(triplet.negative, window, augment_spec, frames, rng),
            )
        )
    return batch
