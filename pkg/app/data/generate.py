"""Dataset generation: human clips, robot demos with action sidecars, manifests.

Training seeds stay below TRAIN_SEED_LIMIT and evaluation seeds start at
EVAL_SEED_BASE, so held-out evaluation never reuses a training scene.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from app.core.exceptions import ConfigError
from app.core.logging import JsonStructuredLogger
from app.core.protocols import StructuredLogger
from app.data.clip_io import write_clip
from app.data.manifest import manifest_path, save_manifest, write_actions
from app.models.data import ClipRecord, Manifest, Split
from app.models.run_config import RunConfig
from app.models.world import Domain
from app.sim.scripted import scripted_demo
from app.sim.tasks import get_task, tasks_by_name
from app.sim.variants import sample_human_scene, train_domain

TRAIN_SEED_LIMIT = 1_000_000
EVAL_SEED_BASE = 1_000_000
SEED_STRIDE = 20
_MAX_INDEX = 1500
_MAX_TASKS = 16

_DOMAIN_CODE = {Domain.ROBOT: 0, Domain.HUMAN: 1}


def training_seed(run_seed: int, domain: Domain, task_id: int, index: int) -> int:
    """Seed block of SEED_STRIDE values reserved for one training clip."""
    if not 0 <= index < _MAX_INDEX:
        raise ConfigError(f"clip index {index} outside [0, {_MAX_INDEX}); seed blocks would overlap")
    if not 0 <= task_id < _MAX_TASKS:
        raise ConfigError(f"task id {task_id} outside [0, {_MAX_TASKS}); seed blocks would overlap")
    slot = ((_DOMAIN_CODE[domain] * _MAX_TASKS + task_id) * _MAX_INDEX + index) * SEED_STRIDE
    return (slot + run_seed * 7919) % (TRAIN_SEED_LIMIT - SEED_STRIDE)


def eval_seed(run_seed: int, seed_index: int, task_id: int, trial: int) -> int:
    return EVAL_SEED_BASE + (((run_seed * 8 + seed_index) * 16 + task_id) * 1000 + trial) * SEED_STRIDE


def env_seed(run_seed: int, seed_index: int) -> int:
    return EVAL_SEED_BASE + run_seed * 8 + seed_index


def audit_seed_partition(manifests: Iterable[Manifest], eval_seeds: Iterable[int] = ()) -> List[str]:
    """Names of every record or evaluation seed that crosses the train/eval boundary."""
    violations = [
        record.clip_path
        for manifest in manifests
        for record in manifest.records
        if record.seed is not None and record.seed >= TRAIN_SEED_LIMIT
    ]
    violations.extend(f"eval seed {s}" for s in eval_seeds if s < EVAL_SEED_BASE)
    return violations


def split_point(n: int, val_fraction: float) -> int:
    """Records [0, split) train, [split, n) validate."""
    if n < 2:
        return n
    n_val = max(1, int(round(n * val_fraction)))
    return n - n_val


@dataclass
class GenerationSummary:
    out: Path
    human_tasks: List[str] = field(default_factory=list)
    robot_tasks: List[str] = field(default_factory=list)
    counts: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def count(self, domain: str, split: Optional[str] = None) -> int:
        return sum(n for (d, s), n in self.counts.items() if d == domain and split in (None, s))


def _generate_domain(
    run_config: RunConfig,
    out_dir: Path,
    domain: Domain,
    task_names: Sequence[str],
    per_task: int,
    provenance: Dict[str, Any],
    logger: StructuredLogger,
) -> Dict[Split, Manifest]:
    world = run_config.world
    size = (world.frame_size, world.frame_size)
    tasks = tasks_by_name(task_names)
    records: Dict[Split, List[ClipRecord]] = {Split.TRAIN: [], Split.VAL: []}
    for task in tasks:
        cut = split_point(per_task, run_config.data.val_fraction)
        for index in range(per_task):
            seed = training_seed(run_config.seed, domain, task.task_id, index)
            if domain == Domain.HUMAN:
                scene, distractors = sample_human_scene(seed)
            else:
                # Alternate canonical and rearranged scenes so any prefix stays balanced.
                scene, distractors = train_domain(rearranged=index % 2 == 1), ()
            clip, actions = scripted_demo(
                task,
                scene,
                noise=world.demo_noise,
                seed=seed,
                size=size,
                distractors=distractors,
                max_attempts=world.max_demo_attempts,
            )
            rel = Path("clips") / task.name / f"{index:04d}.dvdc"
            path = write_clip(clip, out_dir / domain.value / rel)
            if domain == Domain.ROBOT:
                write_actions(path, f"{task.name}/{index:04d}", actions)
            split = Split.TRAIN if index < cut else Split.VAL
            records[split].append(
                ClipRecord(
                    clip_path=rel.as_posix(),
                    task_id=task.task_id,
                    domain=domain,
                    env_tier=0,
                    n_frames=clip.n_frames,
                    seed=int(clip.meta["seed"]),
                )
            )
        logger.info("generated task clips", domain=domain.value, task=task.name, clips=per_task)

    manifests = {}
    for split, split_records in records.items():
        manifest = Manifest(
            split=split,
            generation_seed=run_config.seed,
            tasks=tasks,
            records=split_records,
            provenance=provenance,
        )
        save_manifest(manifest, manifest_path(out_dir, domain.value, split))
        manifests[split] = manifest
    return manifests


def generate_datasets(
    run_config: RunConfig,
    out_dir: Path,
    provenance: Dict[str, Any],
    human_tasks: Optional[Sequence[str]] = None,
    robot_tasks: Optional[Sequence[str]] = None,
    logger: Optional[StructuredLogger] = None,
) -> GenerationSummary:
    """Write `<out>/{human,robot}/{train,val}.json` plus their clip files."""
    logger = logger or JsonStructuredLogger("dvd.data")
    data = run_config.data
    human_tasks = list(data.human_tasks if human_tasks is None else human_tasks)
    robot_tasks = list(data.robot_tasks if robot_tasks is None else robot_tasks)
    if not human_tasks and not robot_tasks:
        raise ConfigError("data generation needs at least one task")
    for name in (*human_tasks, *robot_tasks):
        get_task(name)

    out_dir = Path(out_dir)
    summary = GenerationSummary(out=out_dir, human_tasks=human_tasks, robot_tasks=robot_tasks)
    plan = (
        (Domain.HUMAN, human_tasks, data.human_clips_per_task),
        (Domain.ROBOT, robot_tasks, data.robot_demos_per_task),
    )
    for domain, names, per_task in plan:
        manifests = _generate_domain(run_config, out_dir, domain, names, per_task, provenance, logger)
        for split, manifest in manifests.items():
            summary.counts[(domain.value, split.value)] = len(manifest.records)
    return summary
