import numpy as np
import pytest

from app.core.exceptions import DataError, InsufficientDataError
from app.data.clip_io import write_clip
from app.models.data import ClipRecord, Manifest
from app.models.training import BCConfig
from app.models.world import Domain
from app.services.bc_service import (
    BCPolicy,
    RobotDemo,
    load_policy,
    load_robot_demos,
    run_bc_episode,
    save_policy,
    state_features,
    train_bc,
)
from app.sim.tasks import get_task
from app.sim.world import HORIZON, initial_state

SIZE = (16, 16)


@pytest.fixture
def robot_demos():
    rng = np.random.default_rng(0)
    demos = []
    for task_id, value in ((0, 0.2), (2, 0.8)):
        for _ in range(2):
            frames = np.full((7, 16, 16, 3), value)
            demos.append(RobotDemo(task_id, frames, rng.uniform(-0.02, 0.02, size=(6, 3))))
    return demos


@pytest.fixture
def bc_config():
    return BCConfig(hidden=[8], epochs=2, steps_per_epoch=3, batch_size=4)


def test_state_features_pool_blocks():
    frame = np.zeros((16, 16, 3))
    frame[:2, :2] = 1.0
    features = state_features(frame)
    assert features.shape == (8 * 8 * 3,)
    assert features[:3].tolist() == [1.0, 1.0, 1.0]
    assert features[3:].sum() == 0.0


def test_initial_loss_is_mean_square_action(tiny_model, robot_demos, bc_config):
    result = train_bc(robot_demos, [], tiny_model, bc_config, seed=0)
    assert 0.0 < result.initial_loss <= 0.02**2
    assert len(result.curve) == bc_config.epochs
    assert result.policy.head.frozen


def test_training_conditions_on_human_clips(tiny_model, robot_demos, bc_config, constant_clip):
    humans = [constant_clip(0.2, task_id=0, domain=Domain.HUMAN), constant_clip(0.8, task_id=2, domain=Domain.HUMAN)]
    result = train_bc(robot_demos, humans, tiny_model, bc_config.model_copy(update={"robot_demo_prob": 0.0}), seed=1)
    assert np.isfinite(result.curve[-1]["train_loss"])


def test_training_needs_robot_demos(tiny_model, bc_config):
    with pytest.raises(InsufficientDataError):
        train_bc([], [], tiny_model, bc_config, seed=0)


def test_policy_actions_are_clamped(tiny_model, robot_demos, bc_config):
    policy = train_bc(robot_demos, [], tiny_model, bc_config, seed=0).policy
    head = policy.head
    head.set_parameters({k: np.full_like(v, 5.0) for k, v in head.parameters().items()})
    actions = policy.act_batch(np.ones(4), [np.full((16, 16, 3), 0.5)] * 2)
    assert np.allclose(actions, policy.high)


def test_bc_episode_runs_full_horizon(tiny_model, robot_demos, bc_config, robot_domain, constant_clip):
    policy = train_bc(robot_demos, [], tiny_model, bc_config, seed=0).policy
    episode = run_bc_episode(policy, robot_domain, get_task("drawer_close"), constant_clip(0.2), SIZE, horizon=6)
    assert episode.n_actions == 6
    assert episode.clip.n_frames == 7


def test_bc_episode_never_runs_past_world_horizon(tiny_model, robot_demos, bc_config, robot_domain, constant_clip):
    policy = train_bc(robot_demos, [], tiny_model, bc_config, seed=0).policy
    init = initial_state().evolve(time=HORIZON - 4)
    episode = run_bc_episode(
        policy, robot_domain, get_task("drawer_close"), constant_clip(0.2), SIZE, horizon=HORIZON + 30, init=init
    )
    assert episode.n_actions == 4
    assert episode.states[-1].time == HORIZON


def test_policy_round_trip(tmp_path, tiny_model, robot_demos, bc_config):
    policy = train_bc(robot_demos, [], tiny_model, bc_config, seed=0).policy
    save_policy(tmp_path, policy, {"seed": 0})
    restored = load_policy(tmp_path, tiny_model)
    assert isinstance(restored, BCPolicy)
    frame = np.full((16, 16, 3), 0.3)
    assert np.array_equal(restored.act(np.ones(4), frame), policy.act(np.ones(4), frame))


def test_missing_action_sidecar_is_data_error(tmp_path, constant_clip):
    write_clip(constant_clip(0.5), tmp_path / "clips" / "drawer_close" / "0000.dvdc")
    manifest = Manifest(
        tasks=[get_task("drawer_close")],
        records=[
            ClipRecord(
                clip_path="clips/drawer_close/0000.dvdc",
                task_id=get_task("drawer_close").task_id,
                domain=Domain.ROBOT,
                n_frames=6,
            )
        ],
    )
    with pytest.raises(DataError):
        load_robot_demos(manifest, tmp_path)
