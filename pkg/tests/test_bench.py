import pytest

from app.core.exceptions import ConfigError
from app.models.bench import ExperimentKind, ExperimentSpec, MethodKind, MethodSpec
from app.models.run_config import ALL_TASK_NAMES
from app.services.artifact_cache import ArtifactCache
from app.services.bench_service import (
    BenchContext,
    _validate,
    default_methods,
    human_task_pool,
    robot_train_tasks,
    run_experiment,
)
from app.sim.tasks import HELD_OUT_ROBOT_TASKS


@pytest.mark.parametrize(
    "kind, names",
    [
        (ExperimentKind.ENV_GEN, ["robot_only", "robot+6_human", "robot_only(robot_demo)", "random"]),
        (ExperimentKind.TASK_GEN, ["robot_only", "robot+6_human", "robot+9_human", "random"]),
        (ExperimentKind.ABLATION, ["robot+6_human", "robot+6_human@40", "robot+6_human@20", "random"]),
        (ExperimentKind.BASELINES, ["robot+6_human", "random", "bc", "classifier_reward"]),
    ],
)
def test_default_method_matrix(kind, names):
    assert [m.name for m in default_methods(ExperimentSpec(kind=kind))] == names


def test_human_pool_puts_targets_first():
    spec = ExperimentSpec()
    pool = human_task_pool(spec)
    assert pool[:3] == spec.target_tasks
    assert sorted(pool) == sorted(ALL_TASK_NAMES)


def test_task_generalization_pool_excludes_targets():
    spec = ExperimentSpec(kind=ExperimentKind.TASK_GEN)
    pool = human_task_pool(spec)
    assert not set(pool) & set(spec.target_tasks)
    assert len(pool) == len(ALL_TASK_NAMES) - 3
    assert robot_train_tasks(spec) == list(HELD_OUT_ROBOT_TASKS)


def test_env_generalization_trains_robot_on_targets():
    spec = ExperimentSpec()
    assert robot_train_tasks(spec) == spec.target_tasks


def test_task_generalization_rejects_target_overlap():
    spec = ExperimentSpec(kind=ExperimentKind.TASK_GEN, train_robot_tasks=["drawer_open", "drawer_close"])
    with pytest.raises(ConfigError, match="drawer_close"):
        robot_train_tasks(spec)


@pytest.mark.parametrize(
    "methods",
    [
        [MethodSpec(method_kind=MethodKind.RANDOM), MethodSpec(method_kind=MethodKind.RANDOM)],
        [MethodSpec(method_kind=MethodKind.DVD, human_task_count=0)],
        [MethodSpec(method_kind=MethodKind.DVD, human_task_count=13)],
    ],
)
def test_invalid_method_lists(methods):
    spec = ExperimentSpec()
    with pytest.raises(ConfigError):
        _validate(spec, methods, human_task_pool(spec))


def test_spec_digest_tracks_content():
    assert ExperimentSpec().spec_digest() == ExperimentSpec().spec_digest()
    assert ExperimentSpec(trials=2).spec_digest() != ExperimentSpec().spec_digest()


def test_invalid_tier_rejected():
    with pytest.raises(ValueError):
        ExperimentSpec(tiers=[0, 5])


@pytest.mark.slow
def test_smoke_run_is_cached_and_repeatable(tmp_path, run_config, logger):
    spec = ExperimentSpec(
        name="smoke",
        methods=[MethodSpec(method_kind=MethodKind.RANDOM), MethodSpec(method_kind=MethodKind.PROGRESS)],
        tiers=[0],
        target_tasks=["drawer_close"],
        trials=1,
        seeds=1,
    )
    ctx = BenchContext(run_config, ArtifactCache(tmp_path / "cache", logger), {"seed": run_config.seed}, logger)

    first = run_experiment(ctx, spec)
    second = run_experiment(ctx, spec)

    assert [c.key() for c in first.cells] == [("progress", 0, "drawer_close", 0), ("random", 0, "drawer_close", 0)]
    assert all(c.successes in (0, 1) for c in first.cells)
    assert first.cells == second.cells
    assert first.spec_digest == spec.spec_digest()
    assert len(list((tmp_path / "cache" / "encoder").iterdir())) == 1
