import argparse
from pathlib import Path
from typing import Optional

from app.cli.common import add_config_args, add_planner_args, record_run, resolve
from app.core.event_handlers import CommandContext
from app.core.exceptions import ConfigError
from app.core.protocols import Dynamics
from app.data.clip_io import read_clip
from app.data.generate import env_seed, eval_seed
from app.models.bench import MethodKind
from app.models.world import Domain, DomainSpec
from app.scorers.factory import ScorerFactory
from app.services.dvd_service import DVDModel, load_model
from app.services.dynamics_service import LearnedDynamics, OracleDynamics, load_predictor
from app.services.planner_service import episode_trace, run_episode, save_trace
from app.sim.tasks import get_task
from app.sim.variants import sample_env_variant
from app.sim.world import initial_state_for

ORACLE = "oracle"
PLANNING_METHODS = (MethodKind.DVD, MethodKind.CLASSIFIER_REWARD, MethodKind.PROGRESS)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("plan", help="plan robot episodes toward a demonstrated task")
    add_config_args(parser)
    add_planner_args(parser)
    parser.add_argument("--demo", type=Path, required=True, help="demonstration clip (.dvdc)")
    parser.add_argument("--task", required=True, help="task the demo shows; decides success")
    parser.add_argument("--model", type=Path, default=None, help="trained DVD directory")
    parser.add_argument("--dynamics", default=ORACLE, help="'oracle' or a trained predictor directory")
    parser.add_argument("--method", default=MethodKind.DVD.value, choices=[m.value for m in PLANNING_METHODS])
    parser.add_argument("--tier", type=int, default=0, choices=range(4), help="environment tier")
    parser.add_argument("--seed-index", type=int, default=0, help="evaluation seed index of the environment")
    parser.add_argument("--trials", type=int, default=1, help="episodes to run")
    parser.add_argument("--out", type=Path, required=True, help="directory for episode traces")
    parser.set_defaults(handler=plan)


def _dynamics(spec: str, domain: DomainSpec, size: int) -> Dynamics:
    if spec == ORACLE:
        return OracleDynamics(domain, (size, size))
    return LearnedDynamics(load_predictor(Path(spec)))


def plan(args: argparse.Namespace, ctx: CommandContext) -> None:
    if args.trials < 1:
        raise ConfigError(f"--trials must be at least 1, got {args.trials}")
    run_config = resolve(args, ctx)
    prov = record_run(args.out, "plan", run_config, ctx)
    task = get_task(args.task)
    demo = read_clip(args.demo, task_id=task.task_id, domain=Domain.HUMAN)
    size = run_config.world.frame_size
    domain = sample_env_variant(args.tier, env_seed(run_config.seed, args.seed_index))
    model: Optional[DVDModel] = load_model(args.model) if args.model is not None else None
    scorer = ScorerFactory(ctx.logger).create(MethodKind(args.method), task, model)
    dynamics = _dynamics(args.dynamics, domain, size)
    init = initial_state_for(domain)

    successes = 0
    for trial in range(args.trials):
        seed = eval_seed(run_config.seed, args.seed_index, task.task_id, trial)
        episode = run_episode(
            domain, task, demo, scorer, dynamics, run_config.planner, seed, (size, size), init, args.tier
        )
        trace = episode_trace(episode, task, args.tier, dynamics.mode, seed, prov)
        save_trace(args.out, f"{task.name}_tier{args.tier}_trial{trial:03d}", episode, trace)
        successes += int(episode.success)

    trials = args.trials
    ctx.logger.info("planning finished", task=task.name, tier=args.tier, successes=successes, trials=trials)
    print(
        ctx.templates.get_formatted(
            "plan_summary",
            trials=trials,
            task=task.name,
            tier=args.tier,
            dynamics_mode=dynamics.mode,
            demo=args.demo,
            success_rate=successes / trials,
            successes=successes,
            out=args.out,
        )
    )
