"""Pipeline stages shared by the CLI commands and the benchmark harness.

A stage reads the directories written by earlier stages, writes its own
artifacts into `out_dir` and records its curve in `curves.json` together
with the run provenance.
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from app.core.config import write_json
from app.core.exceptions import ConfigError
from app.core.logging import JsonStructuredLogger, log_stage
from app.core.protocols import StructuredLogger
from app.data.generate import GenerationSummary, generate_datasets
from app.data.manifest import load_split
from app.data.sampler import ClipPool
from app.models.data import Split
from app.models.run_config import RunConfig
from app.models.world import Domain, DomainSpec, VideoClip
from app.services.bc_service import BCTrainResult, load_robot_demos, save_policy, train_bc
from app.services.dvd_service import (
    PretrainResult,
    TrainResult,
    load_pretrained,
    new_dvd_model,
    pretrain_encoder,
    save_model,
    save_pretrained,
    train_dvd,
)
from app.services.dynamics_service import (
    PredictorResult,
    collect_random_episodes,
    save_dataset,
    save_predictor,
    train_predictor,
)
from app.sim.tasks import get_task

CURVES_FILE = "curves.json"
INTERACTIONS_DIR = "interactions"


@dataclass
class DVDSelection:
    """Which clips a DVD variant trains on; None means everything in the dataset."""

    human_tasks: Optional[List[str]] = None
    robot_tasks: Optional[List[str]] = None
    robot_demos_per_task: Optional[int] = None

    @classmethod
    def from_run_config(cls, run_config: RunConfig) -> "DVDSelection":
        train = run_config.dvd_train
        return cls(train.human_tasks, train.robot_tasks, train.robot_demos_per_task)


def _task_ids(names: Optional[Sequence[str]]) -> Optional[List[int]]:
    if names is None:
        return None
    return [get_task(name).task_id for name in names]


def _write_curve(out_dir: Path, provenance: Dict[str, Any], curve: List[Dict[str, float]], **extra: Any) -> Path:
    return write_json(Path(out_dir) / CURVES_FILE, {"provenance": provenance, "curve": curve, **extra})


def run_gen_data(
    run_config: RunConfig,
    out_dir: Path,
    provenance: Dict[str, Any],
    human_tasks: Optional[Sequence[str]] = None,
    robot_tasks: Optional[Sequence[str]] = None,
    logger: Optional[StructuredLogger] = None,
) -> GenerationSummary:
    start = time.perf_counter()
    summary = generate_datasets(run_config, Path(out_dir), provenance, human_tasks, robot_tasks, logger)
    log_stage(
        "gen-data",
        (time.perf_counter() - start) * 1000,
        human=summary.count(Domain.HUMAN.value),
        robot=summary.count(Domain.ROBOT.value),
    )
    return summary


def run_pretrain_stage(
    run_config: RunConfig,
    data_dir: Path,
    out_dir: Path,
    provenance: Dict[str, Any],
    logger: Optional[StructuredLogger] = None,
) -> PretrainResult:
    data = run_config.data
    _, train_clips = load_split(data_dir, Domain.HUMAN, Split.TRAIN)
    _, val_clips = load_split(data_dir, Domain.HUMAN, Split.VAL)
    result = pretrain_encoder(
        train_clips,
        val_clips,
        run_config.encoder_pretrain,
        data.window,
        data.augment,
        data.frames_per_clip,
        run_config.seed,
        logger,
    )
    save_pretrained(Path(out_dir), result, data.frames_per_clip, data.augment.crop_frac, provenance)
    _write_curve(out_dir, provenance, result.curve, val_accuracy=result.val_accuracy)
    return result


def load_training_pools(data_dir: Path, selection: DVDSelection) -> Tuple[ClipPool, ClipPool]:
    """Train and validation ClipPools for one DVD variant.

    The robot budget truncates training demos only; validation keeps every
    held-out demo of the selected robot tasks.
    """
    human_ids = _task_ids(selection.human_tasks)
    robot_ids = _task_ids(selection.robot_tasks)
    _, robot_train = load_split(data_dir, Domain.ROBOT, Split.TRAIN, robot_ids, selection.robot_demos_per_task)
    _, robot_val = load_split(data_dir, Domain.ROBOT, Split.VAL, robot_ids)
    human_train: List[VideoClip] = []
    human_val: List[VideoClip] = []
    if human_ids != []:
        _, human_train = load_split(data_dir, Domain.HUMAN, Split.TRAIN, human_ids)
        _, human_val = load_split(data_dir, Domain.HUMAN, Split.VAL, human_ids)
    if not robot_train:
        raise ConfigError("DVD training needs robot demos of at least one task", stage="train-dvd")
    pool = ClipPool.from_clips(list(human_train) + list(robot_train))
    val_pool = ClipPool.from_clips(list(human_val) + list(robot_val))
    return pool, val_pool


def run_train_dvd_stage(
    run_config: RunConfig,
    data_dir: Path,
    encoder_dir: Path,
    out_dir: Path,
    provenance: Dict[str, Any],
    selection: Optional[DVDSelection] = None,
    logger: Optional[StructuredLogger] = None,
) -> TrainResult:
    selection = selection or DVDSelection.from_run_config(run_config)
    pretrained = load_pretrained(encoder_dir)
    data = run_config.data
    pool, val_pool = load_training_pools(data_dir, selection)
    model = new_dvd_model(
        pretrained, run_config.dvd_train.hidden, data.frames_per_clip, data.augment.crop_frac, run_config.seed
    )
    out_dir = Path(out_dir)
    result = train_dvd(
        model,
        pool,
        val_pool,
        run_config.dvd_train,
        data.window,
        data.augment,
        run_config.seed,
        checkpoint_path=out_dir / "head.last_good.dvdw",
        logger=logger,
    )
    save_model(out_dir, result.model, provenance)
    _write_curve(
        out_dir,
        provenance,
        result.curve,
        human_tasks=selection.human_tasks,
        robot_tasks=selection.robot_tasks,
        robot_demos_per_task=selection.robot_demos_per_task,
    )
    return result


def run_train_dynamics_stage(
    run_config: RunConfig,
    domain: DomainSpec,
    out_dir: Path,
    provenance: Dict[str, Any],
    logger: Optional[StructuredLogger] = None,
) -> PredictorResult:
    """Random-interaction data in `domain`, then a predictor trained on it."""
    config = run_config.dynamics
    size = (run_config.world.frame_size, run_config.world.frame_size)
    dataset = collect_random_episodes(
        domain, config.n_episodes, config.episode_length, run_config.seed, size, run_config.planner
    )
    dataset.provenance = provenance
    out_dir = Path(out_dir)
    save_dataset(dataset, out_dir / INTERACTIONS_DIR)
    result = train_predictor(dataset, config, run_config.seed, logger)
    save_predictor(out_dir, result.predictor, provenance)
    _write_curve(out_dir, provenance, result.curve, holdout_mse=result.holdout_mse, copy_mse=result.copy_mse)
    return result


def run_train_bc_stage(
    run_config: RunConfig,
    data_dir: Path,
    encoder_dir: Path,
    out_dir: Path,
    provenance: Dict[str, Any],
    robot_tasks: Optional[Sequence[str]] = None,
    human_tasks: Optional[Sequence[str]] = None,
    logger: Optional[StructuredLogger] = None,
) -> BCTrainResult:
    """Behavioral cloning on the robot demos, conditioned on same-task videos."""
    logger = logger or JsonStructuredLogger("dvd.bc")
    data = run_config.data
    pretrained = load_pretrained(encoder_dir)
    model = new_dvd_model(
        pretrained, run_config.dvd_train.hidden, data.frames_per_clip, data.augment.crop_frac, run_config.seed
    )
    robot_ids = _task_ids(robot_tasks)
    robot_manifest, _ = load_split(data_dir, Domain.ROBOT, Split.TRAIN, robot_ids)
    demos = load_robot_demos(robot_manifest, Path(data_dir) / Domain.ROBOT.value)
    conditioning_ids = sorted({d.task_id for d in demos})
    if human_tasks is not None:
        conditioning_ids = sorted(set(conditioning_ids) & set(_task_ids(human_tasks) or []))
    human_clips: List[VideoClip] = []
    if conditioning_ids:
        _, human_clips = load_split(data_dir, Domain.HUMAN, Split.TRAIN, conditioning_ids)
    result = train_bc(
        demos, human_clips, model, run_config.experiment.bc, run_config.seed, run_config.planner, logger
    )
    save_policy(Path(out_dir), result.policy, provenance)
    _write_curve(out_dir, provenance, result.curve, initial_loss=result.initial_loss)
    return result
