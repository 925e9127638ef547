"""Hand-coded closed-loop demonstration policies.

Each policy is a generator that yields commanded actions and receives the
successor state after every step (``state = yield action``). Policies are
phase machines (approach, manipulate, retreat) written so that retreating
never undoes the manipulation.
"""

from typing import Callable, Dict, Generator, Optional, Sequence, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from app.core.exceptions import DemoRejectedError, UnsupportedTaskError
from app.models.world import (
    ACTION_BOUND,
    ActionVec,
    DomainSpec,
    Point,
    PredicateKind,
    TaskSpec,
    VideoClip,
    WorldState,
)
from app.sim.tasks import TaskRef, eval_success, get_task
from app.sim.world import HORIZON, distance, initial_state_for, rollout, step

SPEED = ACTION_BOUND
OPEN = -1.0
CLOSE = 1.0
REACH_TOL = 0.02
MAX_PHASE_STEPS = 30
PUSH_GAP = 0.05
STAGING_GAP = 0.09
SIDE_GAP = 0.12
SKIRT_GAP = 0.15
CUP_AWAY_STOP = 0.055
DEFAULT_NOISE = 0.02
DEFAULT_ATTEMPTS = 20

Policy = Generator[ActionVec, WorldState, None]


def _clip(v: float) -> float:
    return min(max(v, -SPEED), SPEED)


def _unit(frm: Point, to: Point) -> Point:
    d = distance(frm, to) or 1.0
    return ((to[0] - frm[0]) / d, (to[1] - frm[1]) / d)


def _move(pos: Point, target: Point, grip: float) -> ActionVec:
    return ActionVec(_clip(target[0] - pos[0]), _clip(target[1] - pos[1]), grip)


def _clearance(a: Point, b: Point, p: Point) -> float:
    """Distance from `p` to the segment a-b."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    length2 = dx * dx + dy * dy
    t = 0.0 if length2 == 0 else ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / length2
    t = min(max(t, 0.0), 1.0)
    return distance(p, (a[0] + t * dx, a[1] + t * dy))


def _goto(
    state: WorldState,
    target: Callable[[WorldState], Point],
    grip: float,
    tol: float = REACH_TOL,
) -> Generator[ActionVec, WorldState, WorldState]:
    for _ in range(MAX_PHASE_STEPS):
        goal = target(state)
        if distance(state.gripper_pos, goal) <= tol:
            break
        state = yield _move(state.gripper_pos, goal, grip)
    return state


def _hold(
    state: WorldState, grip: float, steps: int, velocity: Point = (0.0, 0.0)
) -> Generator[ActionVec, WorldState, WorldState]:
    for _ in range(steps):
        state = yield ActionVec(velocity[0], velocity[1], grip)
    return state


def _hover(state: WorldState, anchor: Point, steps: int) -> Generator[ActionVec, WorldState, WorldState]:
    for _ in range(steps):
        state = yield _move(state.gripper_pos, anchor, OPEN)
    return state


def _around(state: WorldState, obstacle: Point, goal: Point, away: Point):
    """Detour via a side waypoint when the straight path to `goal` grazes `obstacle`."""
    if _clearance(state.gripper_pos, goal, obstacle) >= 0.075:
        return state
    perp = (-away[1], away[0])
    g = state.gripper_pos
    if (g[0] - obstacle[0]) * perp[0] + (g[1] - obstacle[1]) * perp[1] < 0:
        perp = (-perp[0], -perp[1])
    side = (obstacle[0] + SIDE_GAP * perp[0], obstacle[1] + SIDE_GAP * perp[1])
    state = yield from _goto(state, lambda s: side, OPEN)
    return state


def _skirt(state: WorldState, obstacle: Point, goal: Point):
    """Pass `obstacle` on a lane parallel to the obstacle-goal line."""
    if _clearance(state.gripper_pos, goal, obstacle) >= 0.1:
        return state
    u = _unit(obstacle, goal)
    perp = (-u[1], u[0])
    g = state.gripper_pos
    if (g[0] - obstacle[0]) * perp[0] + (g[1] - obstacle[1]) * perp[1] < 0:
        perp = (-perp[0], -perp[1])
    for anchor in (obstacle, goal):
        lane = (anchor[0] + SKIRT_GAP * perp[0], anchor[1] + SKIRT_GAP * perp[1])
        state = yield from _goto(state, lambda s, lane=lane: lane, OPEN)
    return state


def _drawer_close(state: WorldState) -> Policy:
    state = yield from _goto(
        state, lambda s: (s.drawer_handle[0] + 0.03, s.drawer_handle[1]), OPEN
    )
    for _ in range(MAX_PHASE_STEPS):
        if state.drawer_openness < 0.02:
            break
        state = yield ActionVec(-SPEED, _clip(state.drawer_handle[1] - state.gripper_pos[1]), OPEN)
    yield from _hold(state, OPEN, 5, (SPEED, 0.0))


def _drawer_open(state: WorldState) -> Policy:
    def above(s: WorldState) -> Point:
        return (s.drawer_handle[0], s.drawer_handle[1] + 0.08)

    state = yield from _goto(state, lambda s: (s.gripper_pos[0], above(s)[1]), OPEN)
    state = yield from _goto(state, above, OPEN)
    state = yield from _goto(state, lambda s: s.drawer_handle, OPEN)
    for _ in range(MAX_PHASE_STEPS):
        if state.drawer_openness > 0.097:
            break
        state = yield ActionVec(SPEED, _clip(state.drawer_handle[1] - state.gripper_pos[1]), CLOSE)
    yield from _hold(state, OPEN, 5, (SPEED, 0.0))


def _faucet(direction: float) -> Callable[[WorldState], Policy]:
    def policy(state: WorldState) -> Policy:
        start = state.faucet_angle
        state = yield from _goto(state, lambda s: s.faucet_handle, OPEN)
        for _ in range(MAX_PHASE_STEPS):
            if direction * (state.faucet_angle - start) >= 0.035 or abs(state.faucet_angle) >= 0.049:
                break
            dy = _clip(state.faucet_handle[1] - state.gripper_pos[1])
            state = yield ActionVec(direction * SPEED, dy, CLOSE)
        yield from _hold(state, OPEN, 5, (0.0, SPEED))

    return policy


def _push(
    direction: Callable[[WorldState], Point],
    done: Callable[[WorldState, WorldState], bool],
) -> Callable[[WorldState], Policy]:
    def policy(state: WorldState) -> Policy:
        first = state
        u = direction(state)

        def staging(s: WorldState) -> Point:
            u = direction(s)
            return (s.cup_pos[0] - STAGING_GAP * u[0], s.cup_pos[1] - STAGING_GAP * u[1])

        state = yield from _around(state, state.cup_pos, staging(state), u)
        state = yield from _goto(state, staging, OPEN)
        for _ in range(MAX_PHASE_STEPS):
            if done(first, state):
                break
            u = direction(state)
            want = (state.cup_pos[0] - PUSH_GAP * u[0], state.cup_pos[1] - PUSH_GAP * u[1])
            g = state.gripper_pos
            state = yield ActionVec(
                _clip(SPEED * u[0] + want[0] - g[0]), _clip(SPEED * u[1] + want[1] - g[1]), OPEN
            )
        u = direction(state)
        yield from _hold(state, OPEN, 4, (-SPEED * u[0], -SPEED * u[1]))

    return policy


def _no_motion(state: WorldState) -> Policy:
    yield from _hover(state, state.gripper_pos, 30)


def _vertical(sign: float) -> Callable[[WorldState], Policy]:
    def policy(state: WorldState) -> Policy:
        g = state.gripper_pos
        target_y = g[1] + sign * 0.22
        lo, hi = min(g[1], target_y) - 0.08, max(g[1], target_y) + 0.08
        obstacles = (state.drawer_handle, state.faucet_handle, state.cup_pos)

        def clear(x: float) -> bool:
            return all(abs(p[0] - x) > 0.1 or not lo <= p[1] <= hi for p in obstacles)

        column = next(
            (x for x in (g[0], 0.5, 0.42, 0.58, 0.35, 0.65, 0.2, 0.8) if clear(x)), g[0]
        )
        state = yield from _goto(state, lambda s: (column, g[1]), OPEN)
        state = yield from _goto(state, lambda s: (column, target_y), OPEN)
        yield from _hover(state, (column, target_y), 2)

    return policy


def _poke(state: WorldState) -> Policy:
    machine = state.machine_pos
    state = yield from _skirt(state, state.cup_pos, machine)
    state = yield from _goto(state, lambda s: machine, OPEN)
    yield from _hover(state, machine, 2)


def _cup_at_machine(first: WorldState, s: WorldState) -> bool:
    # A step moves the cup at most ~0.028, so stopping here lands inside the goal.
    if distance(s.cup_pos, s.machine_pos) < CUP_AWAY_STOP:
        return True
    u = _unit(first.cup_pos, first.machine_pos)
    ahead = (s.machine_pos[0] - s.cup_pos[0]) * u[0] + (s.machine_pos[1] - s.cup_pos[1]) * u[1]
    return ahead <= 0


def _cup_radial(sign: float) -> Callable[[WorldState], Point]:
    def direction(s: WorldState) -> Point:
        u = _unit(s.cup_pos, s.machine_pos)
        return (sign * u[0], sign * u[1])

    return direction


POLICIES: Dict[PredicateKind, Callable[[WorldState], Policy]] = {
    PredicateKind.DRAWER_CLOSE: _drawer_close,
    PredicateKind.DRAWER_OPEN: _drawer_open,
    PredicateKind.FAUCET_RIGHT: _faucet(1.0),
    PredicateKind.FAUCET_LEFT: _faucet(-1.0),
    PredicateKind.CUP_AWAY: _push(_cup_radial(1.0), _cup_at_machine),
    PredicateKind.CUP_TOWARD: _push(
        _cup_radial(-1.0),
        lambda first, s: distance(s.cup_pos, s.machine_pos)
        > distance(first.cup_pos, first.machine_pos) + 0.08,
    ),
    PredicateKind.PUSH_LEFT: _push(
        lambda s: (-1.0, 0.0), lambda first, s: first.cup_pos[0] - s.cup_pos[0] > 0.08
    ),
    PredicateKind.PUSH_RIGHT: _push(
        lambda s: (1.0, 0.0), lambda first, s: s.cup_pos[0] - first.cup_pos[0] > 0.08
    ),
    PredicateKind.NO_MOTION: _no_motion,
    PredicateKind.LIFT_UP: _vertical(1.0),
    PredicateKind.MOVE_DOWN: _vertical(-1.0),
    PredicateKind.POKE: _poke,
}


def _policy_for(task: TaskSpec) -> Callable[[WorldState], Policy]:
    policy = POLICIES.get(task.predicate_kind)
    if policy is None:
        raise UnsupportedTaskError(f"no scripted policy for task '{task.name}'")
    return policy


def scripted_actions(
    task: TaskRef,
    init: WorldState,
    noise: float = DEFAULT_NOISE,
    seed: int = 0,
    horizon: int = HORIZON,
) -> Tuple[np.ndarray, Tuple[WorldState, ...]]:
    """Run the task's policy with uniform(-noise, noise) action noise.

    Returns the executed (noisy, clamped) actions and the visited states.
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    task = get_task(task)
    policy = _policy_for(task)(init)
    rng = np.random.default_rng(seed)
    state = init
    actions = []
    states = [init]
    command: Optional[ActionVec] = next(policy, None)
    while command is not None and state.time < horizon:
        jitter = rng.uniform(-noise, noise, size=3) if noise > 0 else np.zeros(3)
        action = ActionVec.from_array(command.as_array() + jitter).clamped()
        state = step(state, action, horizon)
        actions.append(action.as_array())
        states.append(state)
        try:
            command = policy.send(state)
        except StopIteration:
            command = None
    return np.array(actions).reshape(-1, 3), tuple(states)


def scripted_demo(
    task: TaskRef,
    domain: DomainSpec,
    noise: float = DEFAULT_NOISE,
    seed: int = 0,
    size: Tuple[int, int] = (32, 32),
    distractors: Sequence[Point] = (),
    env_tier: int = 0,
    max_attempts: int = DEFAULT_ATTEMPTS,
) -> Tuple[VideoClip, np.ndarray]:
    """Render a demonstration that satisfies the task's own predicate.

    Rejected demos are resampled with the seed incremented per attempt.
    """
    task = get_task(task)
    _policy_for(task)
    init = initial_state_for(domain, tuple(distractors))
    actions: np.ndarray = np.zeros((0, 3))
    used_seed = seed
    for attempt in Retrying(
        retry=retry_if_exception_type(DemoRejectedError),
        stop=stop_after_attempt(max_attempts),
        reraise=True,
    ):
        with attempt:
            used_seed = seed + attempt.retry_state.attempt_number - 1
            actions, states = scripted_actions(task, init, noise, used_seed)
            if not eval_success(task, states):
                raise DemoRejectedError(task.name, used_seed)
    clip, _ = rollout(init, [ActionVec.from_array(a) for a in actions], domain, size, env_tier=env_tier)
    clip.task_id = task.task_id
    clip.meta = {"seed": used_seed, "task": task.name}
    return clip, actions
