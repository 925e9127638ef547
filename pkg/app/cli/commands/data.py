import argparse
from pathlib import Path

from app.cli.common import add_config_args, parse_task_list, record_run, resolve
from app.core.event_handlers import CommandContext
from app.models.data import Split
from app.models.world import Domain
from app.services.pipeline_service import run_gen_data


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gen-data", help="generate human and robot datasets")
    add_config_args(parser)
    parser.add_argument("--out", type=Path, required=True, help="dataset directory")
    parser.add_argument("--human-tasks", default=None, help="comma-separated human task names")
    parser.add_argument("--robot-tasks", default=None, help="comma-separated robot task names")
    parser.set_defaults(handler=gen_data)


def gen_data(args: argparse.Namespace, ctx: CommandContext) -> None:
    data_overrides = {}
    for key, value in (("human_tasks", args.human_tasks), ("robot_tasks", args.robot_tasks)):
        names = parse_task_list(value)
        if names is not None:
            data_overrides[key] = names
    run_config = resolve(args, ctx, {"data": data_overrides} if data_overrides else None)
    prov = record_run(args.out, "gen-data", run_config, ctx)
    summary = run_gen_data(run_config, args.out, prov, logger=ctx.logger)
    val_percent = round(run_config.data.val_fraction * 100)
    print(
        ctx.templates.get_formatted(
            "gen_data_summary",
            out=args.out,
            n_human=summary.count(Domain.HUMAN.value),
            n_human_tasks=len(summary.human_tasks),
            split=f"{100 - val_percent}/{val_percent}",
            n_robot=summary.count(Domain.ROBOT.value),
            n_robot_tasks=len(summary.robot_tasks),
            n_val=summary.count(Domain.HUMAN.value, Split.VAL.value) + summary.count(Domain.ROBOT.value, Split.VAL.value),
            config_digest=prov["config_digest"],
        )
    )
