"""Declarative benchmark experiments.

An experiment first builds its stages through the artifact cache (dataset,
encoder, one DVD head per variant, learned dynamics, BC policy) and then
evaluates a grid of (method, tier, task, seed) cells. Every method sees the
same evaluation seeds, environment variants, demos and initial states.
"""

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app.core.exceptions import ArtifactIOError, ConfigError, DataError, FormatError, UnsupportedTaskError
from app.core.logging import JsonStructuredLogger, log_cell
from app.core.protocols import Dynamics, StructuredLogger
from app.data.generate import audit_seed_partition, env_seed, eval_seed
from app.data.manifest import load_manifest, manifest_path
from app.models.bench import (
    DemoSource,
    ExperimentKind,
    ExperimentSpec,
    MethodKind,
    MethodSpec,
    ResultCell,
    ResultsTable,
)
from app.models.data import Split
from app.models.planner import DynamicsMode, EpisodeResult
from app.models.run_config import ALL_TASK_NAMES, RunConfig
from app.models.world import Domain, DomainSpec, TaskSpec, VideoClip
from app.scorers.factory import ScorerFactory
from app.services.artifact_cache import ArtifactCache, payload_digest
from app.services.bc_service import BCPolicy, load_policy, run_bc_episode
from app.services.dvd_service import DVDModel, load_model, load_pretrained, new_dvd_model
from app.services.dynamics_service import LearnedDynamics, OracleDynamics, load_predictor
from app.services.pipeline_service import (
    CURVES_FILE,
    DVDSelection,
    run_gen_data,
    run_pretrain_stage,
    run_train_bc_stage,
    run_train_dvd_stage,
    run_train_dynamics_stage,
)
from app.services.planner_service import run_episode, run_random_episode
from app.services.report_service import finalize
from app.sim.scripted import scripted_demo
from app.sim.tasks import HELD_OUT_ROBOT_TASKS, get_task, tasks_by_name
from app.sim.variants import sample_env_variant, sample_human_scene
from app.sim.world import initial_state_for

COMPOSITE_TIER = 3
COMPOSITE_LABEL = "real-robot analogue"


@dataclass
class BenchContext:
    run_config: RunConfig
    cache: ArtifactCache
    provenance: Dict[str, Any]
    logger: StructuredLogger = field(default_factory=lambda: JsonStructuredLogger("dvd.bench"))


@dataclass(frozen=True)
class CellPlan:
    method: MethodSpec
    tier: int
    task: TaskSpec
    seed_index: int
    label: Optional[str] = None

    def key(self) -> Tuple[str, int, str, int]:
        return (self.method.name, self.tier, self.task.name, self.seed_index)


def default_methods(spec: ExperimentSpec) -> List[MethodSpec]:
    """The method matrix of each experiment kind when the spec lists none."""
    if spec.kind == ExperimentKind.ENV_GEN:
        return [
            MethodSpec(method_kind=MethodKind.DVD_ROBOT_ONLY),
            MethodSpec(method_kind=MethodKind.DVD, human_task_count=6),
            MethodSpec(method_kind=MethodKind.DVD_ROBOT_ONLY, demo_source=DemoSource.ROBOT),
            MethodSpec(method_kind=MethodKind.RANDOM),
        ]
    if spec.kind == ExperimentKind.TASK_GEN:
        return [
            MethodSpec(method_kind=MethodKind.DVD_ROBOT_ONLY),
            MethodSpec(method_kind=MethodKind.DVD, human_task_count=6),
            MethodSpec(method_kind=MethodKind.DVD, human_task_count=9),
            MethodSpec(method_kind=MethodKind.RANDOM),
        ]
    if spec.kind == ExperimentKind.ABLATION:
        return [
            MethodSpec(method_kind=MethodKind.DVD, human_task_count=6, robot_demos_per_task=budget)
            for budget in spec.budgets
        ] + [MethodSpec(method_kind=MethodKind.RANDOM)]
    return [
        MethodSpec(method_kind=MethodKind.DVD, human_task_count=6),
        MethodSpec(method_kind=MethodKind.RANDOM),
        MethodSpec(method_kind=MethodKind.BC, human_task_count=6),
        MethodSpec(method_kind=MethodKind.CLASSIFIER_REWARD),
    ]


def robot_train_tasks(spec: ExperimentSpec) -> List[str]:
    if spec.train_robot_tasks is not None:
        names = list(spec.train_robot_tasks)
    elif spec.kind == ExperimentKind.TASK_GEN:
        names = list(HELD_OUT_ROBOT_TASKS)
    else:
        names = list(spec.target_tasks)
    tasks_by_name(names)
    if spec.kind == ExperimentKind.TASK_GEN:
        overlap = sorted(set(names) & set(spec.target_tasks))
        if overlap:
            raise ConfigError(f"task generalization trains on target tasks: {', '.join(overlap)}", stage="bench")
    return names


def human_task_pool(spec: ExperimentSpec) -> List[str]:
    """Human tasks in the order variants take them: targets first, then the registry.

    Task generalization leaves the targets out entirely.
    """
    rest = [name for name in ALL_TASK_NAMES if name not in spec.target_tasks]
    if spec.kind == ExperimentKind.TASK_GEN:
        return rest
    return list(spec.target_tasks) + rest


def _validate(spec: ExperimentSpec, methods: Sequence[MethodSpec], pool: Sequence[str]) -> None:
    tasks_by_name(spec.target_tasks)
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError(f"method names must be unique, got {names}", stage="bench")
    for method in methods:
        if method.method_kind == MethodKind.DVD and method.human_task_count == 0:
            raise ConfigError("a dvd method needs human_task_count >= 1; use dvd_robot_only", stage="bench")
        if method.human_task_count > len(pool):
            raise ConfigError(
                f"{method.name} asks for {method.human_task_count} human tasks, only {len(pool)} available",
                stage="bench",
            )


def _read_curve(directory: Path) -> List[Dict[str, float]]:
    path = Path(directory) / CURVES_FILE
    try:
        return list(json.loads(path.read_text()).get("curve", []))
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed curves file {path}: {e}") from e


class EvalDemos:
    """Scripted evaluation demos keyed by (source, task, seed); identical for every method."""

    def __init__(self, run_config: RunConfig):
        self.world = run_config.world
        self._demos: Dict[Tuple[str, int, int, str], VideoClip] = {}
        self._lock = threading.Lock()

    def get(self, source: DemoSource, task: TaskSpec, seed: int, domain: DomainSpec, tier: int) -> VideoClip:
        key = (source.value, task.task_id, seed, domain.model_dump_json() if source == DemoSource.ROBOT else "")
        with self._lock:
            if key in self._demos:
                return self._demos[key]
        size = (self.world.frame_size, self.world.frame_size)
        if source == DemoSource.HUMAN:
            scene, distractors = sample_human_scene(seed)
            clip, _ = scripted_demo(
                task, scene, self.world.demo_noise, seed, size, distractors, max_attempts=self.world.max_demo_attempts
            )
        else:
            clip, _ = scripted_demo(
                task,
                domain,
                self.world.demo_noise,
                seed,
                size,
                env_tier=tier,
                max_attempts=self.world.max_demo_attempts,
            )
        with self._lock:
            return self._demos.setdefault(key, clip)


@dataclass
class BenchResources:
    data_dir: Path
    encoder_dir: Path
    models: Dict[str, DVDModel] = field(default_factory=dict)
    curves: Dict[str, List[Dict[str, float]]] = field(default_factory=dict)
    classifier_model: Optional[DVDModel] = None
    bc_policy: Optional[BCPolicy] = None
    dynamics: Dict[Tuple[int, int], Dynamics] = field(default_factory=dict)


class BenchRunner:
    def __init__(self, ctx: BenchContext, spec: ExperimentSpec):
        self.ctx = ctx
        self.spec = spec
        self.run_config = ctx.run_config.model_copy(update={"experiment": spec})
        self.size = (self.run_config.world.frame_size, self.run_config.world.frame_size)
        self.logger = ctx.logger
        self.factory = ScorerFactory(ctx.logger)
        self.demos = EvalDemos(self.run_config)

    def _fetch(self, stage: str, payload: Dict[str, Any], build: Callable[[Path], Any], load: Callable[[Path], Any]):
        return self.ctx.cache.fetch(stage, payload, build, load), payload_digest(stage, payload)

    def _stage_config(self, human_tasks: Sequence[str], robot_tasks: Sequence[str]) -> RunConfig:
        update = {"human_tasks": list(human_tasks), "robot_tasks": list(robot_tasks)}
        data = self.run_config.data.model_copy(update=update)
        return self.run_config.model_copy(update={"data": data})

    # Stages

    def prepare(
        self,
        methods: Sequence[MethodSpec],
        pool: Sequence[str],
        robot_tasks: Sequence[str],
        cells: Sequence[CellPlan],
    ) -> BenchResources:
        rc = self._stage_config(pool, robot_tasks)
        prov = self.ctx.provenance

        def build_data(directory: Path) -> Path:
            run_gen_data(rc, directory, prov, pool, robot_tasks, self.logger)
            return directory

        data_dir, data_digest = self._fetch(
            "data",
            {
                "seed": rc.seed,
                "world": rc.world.model_dump(mode="json"),
                "data": rc.data.model_dump(mode="json", exclude={"window", "augment", "frames_per_clip"}),
            },
            build_data,
            Path,
        )

        def build_encoder(directory: Path) -> Path:
            run_pretrain_stage(rc, data_dir, directory, prov, self.logger)
            return directory

        encoder_dir, encoder_digest = self._fetch(
            "encoder",
            {
                "data": data_digest,
                "seed": rc.seed,
                "pretrain": rc.encoder_pretrain.model_dump(mode="json"),
                "frames": rc.data.frames_per_clip,
                "window": rc.data.window.model_dump(mode="json"),
                "augment": rc.data.augment.model_dump(mode="json"),
            },
            build_encoder,
            Path,
        )
        resources = BenchResources(data_dir=data_dir, encoder_dir=encoder_dir)
        self._audit(data_dir, cells)

        for method in methods:
            if method.uses_dvd:
                self._prepare_dvd(rc, resources, method, pool, robot_tasks, encoder_digest)
            elif method.method_kind == MethodKind.CLASSIFIER_REWARD and resources.classifier_model is None:
                resources.classifier_model = self._plain_model(rc, encoder_dir)
            elif method.method_kind == MethodKind.BC and resources.bc_policy is None:
                resources.bc_policy = self._prepare_bc(rc, resources, method, pool, robot_tasks, encoder_digest)

        planning = {
            (c.tier, c.seed_index) for c in cells if c.method.method_kind not in (MethodKind.RANDOM, MethodKind.BC)
        }
        for tier, seed_index in sorted(planning):
            resources.dynamics[(tier, seed_index)] = self._prepare_dynamics(rc, tier, seed_index)
        return resources

    def _plain_model(self, rc: RunConfig, encoder_dir: Path) -> DVDModel:
        """Frozen encoder with its classifier; the untrained head is never used."""
        data = rc.data
        return new_dvd_model(
            load_pretrained(encoder_dir), rc.dvd_train.hidden, data.frames_per_clip, data.augment.crop_frac, rc.seed
        )

    def _prepare_dvd(
        self,
        rc: RunConfig,
        resources: BenchResources,
        method: MethodSpec,
        pool: Sequence[str],
        robot_tasks: Sequence[str],
        encoder_digest: str,
    ) -> None:
        if rc.data.robot_demos_per_task < method.robot_demos_per_task:
            self.logger.warning(
                "robot budget exceeds generated demos; using all",
                method=method.name,
                budget=method.robot_demos_per_task,
                generated=rc.data.robot_demos_per_task,
            )
        selection = DVDSelection(
            human_tasks=list(pool[: method.human_task_count]),
            robot_tasks=list(robot_tasks),
            robot_demos_per_task=method.robot_demos_per_task,
        )

        def build(directory: Path) -> Tuple[DVDModel, List[Dict[str, float]]]:
            result = run_train_dvd_stage(
                rc, resources.data_dir, resources.encoder_dir, directory, self.ctx.provenance, selection, self.logger
            )
            return result.model, result.curve

        def load(directory: Path) -> Tuple[DVDModel, List[Dict[str, float]]]:
            return load_model(directory), _read_curve(directory)

        payload = {
            "encoder": encoder_digest,
            "selection": asdict(selection),
            "train": rc.dvd_train.model_dump(
                mode="json", exclude={"human_tasks", "robot_tasks", "robot_demos_per_task"}
            ),
        }
        (model, curve), _ = self._fetch("dvd", payload, build, load)
        resources.models[method.name] = model
        resources.curves[method.name] = curve

    def _prepare_bc(
        self,
        rc: RunConfig,
        resources: BenchResources,
        method: MethodSpec,
        pool: Sequence[str],
        robot_tasks: Sequence[str],
        encoder_digest: str,
    ) -> BCPolicy:
        human_tasks = list(pool[: method.human_task_count])
        payload = {
            "encoder": encoder_digest,
            "bc": rc.experiment.bc.model_dump(mode="json"),
            "robot_tasks": list(robot_tasks),
            "human_tasks": human_tasks,
            "bounds": [rc.planner.action_low, rc.planner.action_high],
        }
        policy, _ = self._fetch(
            "bc",
            payload,
            lambda d: run_train_bc_stage(
                rc,
                resources.data_dir,
                resources.encoder_dir,
                d,
                self.ctx.provenance,
                robot_tasks,
                human_tasks,
                self.logger,
            ).policy,
            lambda d: load_policy(d, self._plain_model(rc, resources.encoder_dir)),
        )
        return policy

    def eval_domain(self, tier: int, seed_index: int) -> DomainSpec:
        return sample_env_variant(tier, env_seed(self.run_config.seed, seed_index))

    def _prepare_dynamics(self, rc: RunConfig, tier: int, seed_index: int) -> Dynamics:
        domain = self.eval_domain(tier, seed_index)
        if self.spec.dynamics_mode == DynamicsMode.ORACLE:
            return OracleDynamics(domain, self.size)
        payload = {
            "domain": domain.model_dump(mode="json"),
            "dynamics": rc.dynamics.model_dump(mode="json"),
            "size": rc.world.frame_size,
            "seed": rc.seed,
            "bounds": [rc.planner.action_low, rc.planner.action_high],
        }
        predictor, _ = self._fetch(
            "dynamics",
            payload,
            lambda d: run_train_dynamics_stage(rc, domain, d, self.ctx.provenance, self.logger).predictor,
            load_predictor,
        )
        return LearnedDynamics(predictor)

    def _audit(self, data_dir: Path, cells: Sequence[CellPlan]) -> None:
        """Evaluation seeds stay outside every training manifest; task generalization never trains on a target."""
        manifests = [
            load_manifest(manifest_path(data_dir, domain.value, split))
            for domain in (Domain.HUMAN, Domain.ROBOT)
            for split in (Split.TRAIN, Split.VAL)
        ]
        seeds = {
            eval_seed(self.run_config.seed, c.seed_index, c.task.task_id, trial)
            for c in cells
            for trial in range(self.spec.trials)
        }
        violations = audit_seed_partition(manifests, seeds)
        if violations:
            raise DataError(f"train/eval seed partition violated by {violations[:5]}", stage="bench")
        if self.spec.kind == ExperimentKind.TASK_GEN:
            target_ids = {get_task(name).task_id for name in self.spec.target_tasks}
            leaked = sorted({r.task_id for m in manifests for r in m.records} & target_ids)
            if leaked:
                raise ConfigError(f"target tasks {leaked} appear in training manifests", stage="bench")

    # Cells

    def _episodes(self, cell: CellPlan, resources: BenchResources) -> Optional[List[EpisodeResult]]:
        rc = self.run_config
        method = cell.method
        domain = self.eval_domain(cell.tier, cell.seed_index)
        init = initial_state_for(domain)
        seeds = [eval_seed(rc.seed, cell.seed_index, cell.task.task_id, trial) for trial in range(self.spec.trials)]
        if method.method_kind == MethodKind.RANDOM:
            return [
                run_random_episode(domain, cell.task, rc.planner, s, self.size, init, cell.tier) for s in seeds
            ]
        demos = [self.demos.get(method.demo_source, cell.task, s, domain, cell.tier) for s in seeds]
        if method.method_kind == MethodKind.BC:
            horizon = init.time + rc.planner.rounds * rc.planner.H
            return [
                run_bc_episode(resources.bc_policy, domain, cell.task, demo, self.size, horizon, init)
                for demo in demos
            ]
        model = resources.models.get(method.name) or resources.classifier_model
        try:
            scorer = self.factory.create(method.method_kind, cell.task, model)
        except UnsupportedTaskError:
            return None
        dynamics = resources.dynamics[(cell.tier, cell.seed_index)]
        return [
            run_episode(domain, cell.task, demo, scorer, dynamics, rc.planner, s, self.size, init, cell.tier)
            for demo, s in zip(demos, seeds)
        ]

    def evaluate_cell(self, cell: CellPlan, resources: BenchResources) -> ResultCell:
        start = time.perf_counter()
        episodes = self._episodes(cell, resources)
        successes = None if episodes is None else sum(int(e.success) for e in episodes)
        method = cell.method
        uses_robot_data = method.uses_dvd or method.method_kind == MethodKind.BC
        result = ResultCell(
            method=method.name,
            human_task_count=method.human_task_count,
            robot_demos=method.robot_demos_per_task if uses_robot_data else 0,
            tier=cell.tier,
            task=cell.task.name,
            seed=cell.seed_index,
            trials=self.spec.trials,
            successes=successes,
            dynamics_mode=self.spec.dynamics_mode,
            label=cell.label,
        )
        log_cell(
            method.name,
            cell.tier,
            cell.task.name,
            cell.seed_index,
            successes,
            self.spec.trials,
            (time.perf_counter() - start) * 1000,
        )
        return result

    def run(self, methods: Sequence[MethodSpec], tiers: Sequence[int], composite: bool = False) -> ResultsTable:
        pool = human_task_pool(self.spec)
        robot_tasks = robot_train_tasks(self.spec)
        _validate(self.spec, methods, pool)
        targets = tasks_by_name(self.spec.target_tasks)
        cells = [
            CellPlan(method, tier, task, seed_index)
            for method in methods
            for tier in tiers
            for task in targets
            for seed_index in range(self.spec.seeds)
        ]
        if composite:
            cells += [
                CellPlan(method, COMPOSITE_TIER, task, seed_index, COMPOSITE_LABEL)
                for method in methods
                for task in targets
                for seed_index in range(self.spec.seeds)
            ]
        resources = self.prepare(methods, pool, robot_tasks, cells)
        self.logger.info("evaluating cells", experiment=self.spec.name, cells=len(cells), jobs=self.spec.jobs)

        results: Dict[Tuple[str, int, str, int], ResultCell] = {}
        if self.spec.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.spec.jobs) as executor:
                futures = {cell.key(): executor.submit(self.evaluate_cell, cell, resources) for cell in cells}
                for key, future in futures.items():
                    results[key] = future.result()
        else:
            for cell in cells:
                results[cell.key()] = self.evaluate_cell(cell, resources)

        table = ResultsTable(
            experiment=self.spec.name,
            spec_digest=self.spec.spec_digest(),
            cells=list(results.values()),
            curves={name: resources.curves[name] for name in sorted(resources.curves)},
            provenance=self.ctx.provenance,
        )
        return finalize(table)


def _methods(spec: ExperimentSpec) -> List[MethodSpec]:
    return list(spec.methods) or default_methods(spec)


def run_env_generalization(ctx: BenchContext, spec: ExperimentSpec) -> ResultsTable:
    """DVD variants trained in the tier-0 scenes, evaluated across the shifted tiers."""
    return BenchRunner(ctx, spec).run(_methods(spec), spec.tiers)


def run_task_generalization(ctx: BenchContext, spec: ExperimentSpec) -> ResultsTable:
    """Targets evaluated in tier 0 with no target-task data in training.

    With `include_composite` the targets are also run in tier 3, labelled
    as the real-robot analogue.
    """
    return BenchRunner(ctx, spec).run(_methods(spec), [0], composite=spec.include_composite)


def run_ablation_robot_demos(ctx: BenchContext, spec: ExperimentSpec) -> ResultsTable:
    return BenchRunner(ctx, spec).run(_methods(spec), spec.tiers)


def run_baselines(ctx: BenchContext, spec: ExperimentSpec) -> ResultsTable:
    return BenchRunner(ctx, spec).run(_methods(spec), spec.tiers)


EXPERIMENTS: Dict[ExperimentKind, Callable[[BenchContext, ExperimentSpec], ResultsTable]] = {
    ExperimentKind.ENV_GEN: run_env_generalization,
    ExperimentKind.TASK_GEN: run_task_generalization,
    ExperimentKind.ABLATION: run_ablation_robot_demos,
    ExperimentKind.BASELINES: run_baselines,
}


def run_experiment(ctx: BenchContext, spec: ExperimentSpec) -> ResultsTable:
    return EXPERIMENTS[ExperimentKind(spec.kind)](ctx, spec)
