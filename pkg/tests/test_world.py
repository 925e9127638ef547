import numpy as np
import pytest

from app.core.exceptions import ConfigError, HorizonExceededError, UnsupportedTaskError
from app.models.world import ACTION_BOUND, ActionVec, Domain, DomainSpec, VideoClip
from app.sim.render import render
from app.sim.scripted import scripted_actions, scripted_demo
from app.sim.tasks import TARGET_TASKS, TASK_REGISTRY, eval_success, get_task, task_progress
from app.sim.variants import MAX_TIER, sample_env_variant, sample_human_scene, train_domain
from app.sim.world import (
    DRAWER_INIT,
    DRAWER_RANGE,
    FAUCET_RANGE,
    HORIZON,
    distance,
    initial_state,
    initial_state_for,
    rollout,
    step,
)


def test_step_clamps_actions():
    state = initial_state()
    moved = step(state, ActionVec(dx=1.0, dy=-1.0, grip=5.0))
    assert moved.gripper_pos[0] == pytest.approx(state.gripper_pos[0] + ACTION_BOUND)
    assert moved.gripper_pos[1] == pytest.approx(state.gripper_pos[1] - ACTION_BOUND)
    assert moved.grip_closed
    assert moved.time == 1


def test_zero_action_leaves_objects_alone():
    state = initial_state()
    moved = step(state, ActionVec())
    assert moved.evolve(time=0) == state


def test_step_past_horizon_raises():
    state = initial_state().evolve(time=HORIZON)
    with pytest.raises(HorizonExceededError):
        step(state, ActionVec())


def test_rollout_renders_one_frame_per_state(robot_domain):
    actions = [ActionVec(dx=0.01)] * 5
    clip, states = rollout(initial_state(), actions, robot_domain, size=(24, 24))
    assert clip.frames.shape == (6, 24, 24, 3)
    assert len(states) == 6
    assert clip.domain == Domain.ROBOT


def test_rollout_rejects_too_many_actions(robot_domain):
    with pytest.raises(HorizonExceededError):
        rollout(initial_state(), [ActionVec()] * (HORIZON + 1), robot_domain)


def test_rollout_is_deterministic(robot_domain):
    actions = [ActionVec(dx=-0.02, dy=0.01, grip=1.0)] * 10
    first, _ = rollout(initial_state(), actions, robot_domain)
    second, _ = rollout(initial_state(), actions, robot_domain)
    assert np.array_equal(first.frames, second.frames)


def test_render_range_and_embodiment(robot_domain):
    state = initial_state()
    robot = render(state, robot_domain)
    human = render(state, robot_domain.model_copy(update={"embodiment": Domain.HUMAN}))
    assert robot.shape == (32, 32, 3)
    assert robot.dtype == np.float32
    assert 0.0 <= robot.min() and robot.max() <= 1.0
    assert not np.array_equal(robot, human)


def test_render_rejects_tiny_frames(robot_domain):
    with pytest.raises(ValueError):
        render(initial_state(), robot_domain, size=(8, 8))


def test_video_clip_validation():
    with pytest.raises(ValueError):
        VideoClip(frames=np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        VideoClip(frames=np.full((1, 8, 8, 3), 1.5))


def test_domain_arrangement_must_be_permutation():
    with pytest.raises(ValueError):
        DomainSpec(arrangement=(0, 0, 2))


def test_get_task_by_name_and_id():
    task = get_task("drawer_close")
    assert get_task(task.task_id) == task
    with pytest.raises(ConfigError):
        get_task("juggle")


def test_drawer_close_predicate():
    start = initial_state()
    assert start.drawer_openness == DRAWER_INIT
    closed = start.evolve(drawer_openness=0.02)
    assert eval_success("drawer_close", [start, closed])
    assert not eval_success("drawer_close", [start, start])


def test_no_motion_succeeds_for_idle_trajectory():
    start = initial_state()
    assert eval_success("no_motion", [start, start.evolve(time=10)])


def test_progress_is_bounded_and_rewards_success():
    start = initial_state()
    closed = start.evolve(drawer_openness=0.0)
    for task in TASK_REGISTRY:
        value = task_progress(task, [start, start])
        assert 0.0 <= value <= 1.0
    assert task_progress("drawer_close", [start, closed]) >= 0.8
    assert task_progress("drawer_close", [start, closed]) > task_progress("drawer_close", [start, start])


def _shifted_cup(state, toward_machine):
    cup, machine = state.cup_pos, state.machine_pos
    d = distance(cup, machine)
    ux, uy = (machine[0] - cup[0]) / d, (machine[1] - cup[1]) / d
    return state.evolve(cup_pos=(cup[0] + toward_machine * ux, cup[1] + toward_machine * uy))


def test_cup_toward_progress_penalises_pushing_at_the_machine():
    start = initial_state()
    closer = _shifted_cup(start, 0.03)
    farther = _shifted_cup(start, -0.03)
    assert task_progress("cup_toward", [start, closer]) < task_progress("cup_toward", [start, start])
    assert task_progress("cup_toward", [start, farther]) > task_progress("cup_toward", [start, start])


def test_cup_toward_reaching_prefers_the_flank_over_the_far_side():
    start = initial_state()
    cup, machine = start.cup_pos, start.machine_pos
    d = distance(cup, machine)
    ux, uy = (machine[0] - cup[0]) / d, (machine[1] - cup[1]) / d
    flank = start.evolve(gripper_pos=(cup[0] - 0.05 * uy, cup[1] + 0.05 * ux))
    far_side = start.evolve(gripper_pos=(cup[0] + 0.05 * ux, cup[1] + 0.05 * uy))
    assert task_progress("cup_toward", [start, flank]) > task_progress("cup_toward", [start, far_side])


@pytest.mark.parametrize("tier", range(MAX_TIER + 1))
def test_env_variant_is_seeded_and_graded(tier):
    domain = sample_env_variant(tier, 11)
    assert domain == sample_env_variant(tier, 11)
    assert domain.embodiment == Domain.ROBOT
    assert (domain.palette_id != 0) == (tier >= 1)
    assert (not domain.view.is_identity()) == (tier >= 2)
    if tier < 3:
        assert domain.arrangement == (0, 1, 2)
    else:
        assert domain.arrangement not in ((0, 1, 2), (1, 0, 2))


def test_env_variant_rejects_unknown_tier():
    with pytest.raises(ValueError):
        sample_env_variant(MAX_TIER + 1, 0)


def test_human_scene_is_deterministic():
    domain, distractors = sample_human_scene(5)
    assert domain.embodiment == Domain.HUMAN
    assert (domain, distractors) == sample_human_scene(5)
    assert len(distractors) <= 2


def test_scripted_actions_respect_bounds():
    actions, states = scripted_actions("drawer_close", initial_state(), noise=0.02, seed=3)
    assert actions.shape[1] == 3
    assert np.all(np.abs(actions[:, :2]) <= ACTION_BOUND + 1e-12)
    assert len(states) == len(actions) + 1
    assert len(actions) <= HORIZON


def test_scripted_actions_reject_negative_noise():
    with pytest.raises(ValueError):
        scripted_actions("drawer_close", initial_state(), noise=-0.1)


@pytest.mark.parametrize("task", TARGET_TASKS)
def test_scripted_demo_satisfies_target_task(task, robot_domain):
    clip, actions = scripted_demo(task, robot_domain, seed=0)
    assert clip.task_id == get_task(task).task_id
    assert clip.n_frames == len(actions) + 1
    assert clip.meta["task"] == task


@pytest.mark.slow
@pytest.mark.parametrize("task", [t.name for t in TASK_REGISTRY])
def test_scripted_demos_across_human_scenes(task):
    for seed in range(5):
        domain, distractors = sample_human_scene(seed)
        try:
            clip, _ = scripted_demo(task, domain, seed=seed * 100, distractors=distractors)
        except UnsupportedTaskError:
            pytest.skip(f"no scripted policy for {task}")
        assert clip.domain == Domain.HUMAN


@pytest.mark.slow
def test_random_steps_stay_in_range():
    rng = np.random.default_rng(0)
    state = initial_state()
    for _ in range(100_000):
        if state.time == HORIZON:
            state = initial_state()
        dx, dy = rng.uniform(-2 * ACTION_BOUND, 2 * ACTION_BOUND, size=2)
        state = step(state, ActionVec(dx=float(dx), dy=float(dy), grip=float(rng.uniform(-1.5, 1.5))))
        assert DRAWER_RANGE[0] <= state.drawer_openness <= DRAWER_RANGE[1]
        assert FAUCET_RANGE[0] <= state.faucet_angle <= FAUCET_RANGE[1]
        for point in (state.gripper_pos, state.cup_pos):
            assert 0.0 <= point[0] <= 1.0 and 0.0 <= point[1] <= 1.0


def test_success_does_not_depend_on_render_tier():
    init = initial_state()
    actions, _ = scripted_actions("drawer_close", init, noise=0.02, seed=1)
    steps = [ActionVec.from_array(a) for a in actions]
    outcomes = []
    for tier in range(MAX_TIER + 1):
        _, states = rollout(init, steps, sample_env_variant(tier, 3), (16, 16), env_tier=tier)
        outcomes.append(
            (states, tuple(eval_success(t, states) for t in TASK_REGISTRY), task_progress("drawer_close", states))
        )
    assert all(outcome == outcomes[0] for outcome in outcomes[1:])


@pytest.mark.slow
@pytest.mark.parametrize("task", [t.name for t in TASK_REGISTRY])
def test_noisy_scripted_policies_mostly_succeed(task):
    passed = 0
    for seed in range(200):
        init = initial_state_for(train_domain(rearranged=seed % 2 == 1))
        _, states = scripted_actions(task, init, noise=0.02, seed=seed)
        passed += eval_success(task, states)
    assert passed >= 190
