import argparse
import time
from pathlib import Path
from typing import Any, Dict

from app.cli.common import (
    DVD_DIR,
    ENCODER_DIR,
    add_config_args,
    dynamics_dir,
    parse_task_list,
    record_run,
    resolve,
)
from app.core.event_handlers import CommandContext
from app.data.generate import env_seed
from app.services.pipeline_service import run_pretrain_stage, run_train_dvd_stage, run_train_dynamics_stage
from app.sim.variants import sample_env_variant


def register(subparsers: argparse._SubParsersAction) -> None:
    pretrain = subparsers.add_parser("pretrain-encoder", help="pretrain the video encoder on human clips")
    add_config_args(pretrain)
    pretrain.add_argument("--data", type=Path, required=True, help="dataset directory from gen-data")
    pretrain.add_argument("--out", type=Path, required=True, help="run directory")
    pretrain.set_defaults(handler=pretrain_encoder)

    dvd = subparsers.add_parser("train-dvd", help="train the similarity head over the frozen encoder")
    add_config_args(dvd)
    dvd.add_argument("--data", type=Path, required=True, help="dataset directory from gen-data")
    dvd.add_argument("--out", type=Path, required=True, help="run directory holding the encoder")
    dvd.add_argument("--human-tasks", default=None, help="comma-separated human tasks; empty for robot only")
    dvd.add_argument("--robot-tasks", default=None, help="comma-separated robot tasks")
    dvd.add_argument("--robot-demos", type=int, default=None, help="robot demos per task")
    dvd.set_defaults(handler=train_dvd)

    dynamics = subparsers.add_parser("train-dynamics", help="collect random interaction and train the predictor")
    add_config_args(dynamics)
    dynamics.add_argument("--out", type=Path, required=True, help="run directory")
    dynamics.add_argument("--tier", type=int, default=0, choices=range(4), help="environment tier")
    dynamics.add_argument("--seed-index", type=int, default=0, help="evaluation seed index of the environment")
    dynamics.set_defaults(handler=train_dynamics)


def _print_summary(ctx: CommandContext, stage: str, started: float, out: Path, metric: str, value: Any, digest: str):
    print(
        ctx.templates.get_formatted(
            "stage_summary",
            stage=stage,
            duration_s=time.perf_counter() - started,
            out=out,
            metric_name=metric,
            metric_value=value,
            config_digest=digest,
        )
    )


def pretrain_encoder(args: argparse.Namespace, ctx: CommandContext) -> None:
    started = time.perf_counter()
    run_config = resolve(args, ctx)
    out_dir = args.out / ENCODER_DIR
    prov = record_run(out_dir, "pretrain-encoder", run_config, ctx)
    result = run_pretrain_stage(run_config, args.data, out_dir, prov, ctx.logger)
    _print_summary(
        ctx, "pretrain-encoder", started, out_dir, "val_accuracy", f"{result.val_accuracy:.3f}", prov["config_digest"]
    )


def train_dvd(args: argparse.Namespace, ctx: CommandContext) -> None:
    started = time.perf_counter()
    selection: Dict[str, Any] = {}
    human = parse_task_list(args.human_tasks)
    robot = parse_task_list(args.robot_tasks)
    if human is not None:
        selection["human_tasks"] = human
    if robot is not None:
        selection["robot_tasks"] = robot
    if args.robot_demos is not None:
        selection["robot_demos_per_task"] = args.robot_demos
    run_config = resolve(args, ctx, {"dvd_train": selection} if selection else None)
    out_dir = args.out / DVD_DIR
    prov = record_run(out_dir, "train-dvd", run_config, ctx)
    result = run_train_dvd_stage(run_config, args.data, args.out / ENCODER_DIR, out_dir, prov, logger=ctx.logger)
    _print_summary(
        ctx, "train-dvd", started, out_dir, "val_acc", f"{result.final_val_accuracy:.3f}", prov["config_digest"]
    )


def train_dynamics(args: argparse.Namespace, ctx: CommandContext) -> None:
    started = time.perf_counter()
    run_config = resolve(args, ctx)
    domain = sample_env_variant(args.tier, env_seed(run_config.seed, args.seed_index))
    out_dir = dynamics_dir(args.out, args.tier, args.seed_index)
    prov = record_run(out_dir, "train-dynamics", run_config, ctx)
    result = run_train_dynamics_stage(run_config, domain, out_dir, prov, ctx.logger)
    _print_summary(
        ctx,
        "train-dynamics",
        started,
        out_dir,
        "holdout_mse",
        f"{result.holdout_mse:.5f} (copy-last {result.copy_mse:.5f})",
        prov["config_digest"],
    )
