import argparse
from pathlib import Path
from typing import Any, Dict, Optional

from app.core.config import deep_merge, provenance, resolve_run_config, write_json
from app.core.event_handlers import CommandContext
from app.core.exceptions import ConfigError
from app.models.planner import PLANNER_PRESETS
from app.models.run_config import RunConfig

ENCODER_DIR = "encoder"
DVD_DIR = "dvd"
DYNAMICS_DIR = "dynamics"


def add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="run config (JSON or YAML)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")


def add_planner_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--planner-preset",
        choices=sorted(PLANNER_PRESETS),
        default=None,
        help="named planner settings applied over the config",
    )


def resolve(args: argparse.Namespace, ctx: CommandContext, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Profile defaults, then --config, then the command's own flags."""
    merged: Dict[str, Any] = {}
    preset = getattr(args, "planner_preset", None)
    if preset:
        merged["planner"] = dict(PLANNER_PRESETS[preset])
    if overrides:
        merged = deep_merge(merged, overrides)
    if args.seed is not None:
        merged["seed"] = args.seed
    run_config = resolve_run_config(args.config, merged, ctx.settings)
    ctx.logger.info("run config resolved", digest=run_config.digest(), seed=run_config.seed)
    return run_config


def record_run(out_dir: Path, stage: str, run_config: RunConfig, ctx: CommandContext) -> Dict[str, Any]:
    """Provenance of a stage, with the resolved config written next to its outputs."""
    prov = provenance(run_config, ctx.settings)
    write_json(
        Path(out_dir) / f"{stage}.config.json",
        {"provenance": prov, "run_config": run_config.model_dump(mode="json")},
    )
    return prov


def dynamics_dir(run_dir: Path, tier: int, seed_index: int) -> Path:
    return Path(run_dir) / DYNAMICS_DIR / f"tier{tier}" / f"seed{seed_index}"


def parse_task_list(value: Optional[str]) -> Optional[list]:
    if value is None:
        return None
    names = [name.strip() for name in value.split(",") if name.strip()]
    if not names and value.strip():
        raise ConfigError(f"cannot parse task list '{value}'")
    return names
