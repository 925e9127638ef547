import argparse
from pathlib import Path
from typing import Any, Dict

from app.cli.common import add_config_args, add_planner_args, record_run, resolve
from app.core.event_handlers import CommandContext
from app.models.bench import ExperimentKind
from app.models.planner import DynamicsMode
from app.services.artifact_cache import ArtifactCache
from app.services.bench_service import BenchContext, run_experiment
from app.services.report_service import summary_markdown, write_report


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("bench", help="run a benchmark experiment and write its report")
    add_config_args(parser)
    add_planner_args(parser)
    parser.add_argument("--experiment", choices=[k.value for k in ExperimentKind], default=None)
    parser.add_argument("--out", type=Path, required=True, help="results directory")
    parser.add_argument("--cache", type=Path, default=None, help="stage cache (default: <artifact_root>/cache)")
    parser.add_argument("--jobs", type=int, default=None, help="cells evaluated in parallel")
    parser.add_argument("--dynamics-mode", choices=[m.value for m in DynamicsMode], default=None)
    parser.set_defaults(handler=bench)


def bench(args: argparse.Namespace, ctx: CommandContext) -> None:
    experiment: Dict[str, Any] = {}
    if args.experiment is not None:
        experiment["kind"] = args.experiment
    if args.jobs is not None:
        experiment["jobs"] = args.jobs
    if args.dynamics_mode is not None:
        experiment["dynamics_mode"] = args.dynamics_mode
    run_config = resolve(args, ctx, {"experiment": experiment} if experiment else None)
    spec = run_config.experiment
    prov = record_run(args.out, f"bench-{spec.name}", run_config, ctx)
    cache = ArtifactCache(args.cache or ctx.artifact_root / "cache", ctx.logger)

    table = run_experiment(BenchContext(run_config, cache, prov, ctx.logger), spec)
    written = write_report([table], args.out)
    ctx.logger.info("bench finished", experiment=spec.name, cells=len(table.cells), files=len(written))
    print(
        ctx.templates.get_formatted(
            "bench_summary",
            experiment=spec.name,
            n_cells=len(table.cells),
            table=summary_markdown(table),
            out=args.out,
        )
    )
