"""Task registry and ground-truth success predicates.

Every predicate is a pure function of the first and last latent states of a
trajectory; rendering never enters into it.
"""

from typing import Callable, Dict, List, Sequence, Union

from app.core.exceptions import ConfigError
from app.models.world import PredicateKind, TaskSpec, WorldState
from app.sim.world import CONTACT_RADIUS, DRAWER_INIT, distance

_THRESHOLDS = {
    PredicateKind.DRAWER_CLOSE: 0.05,
    PredicateKind.DRAWER_OPEN: 0.09,
    PredicateKind.FAUCET_RIGHT: 0.01,
    PredicateKind.FAUCET_LEFT: 0.01,
    PredicateKind.CUP_AWAY: 0.07,
    PredicateKind.CUP_TOWARD: 0.05,
    PredicateKind.PUSH_LEFT: 0.05,
    PredicateKind.PUSH_RIGHT: 0.05,
    PredicateKind.NO_MOTION: 0.005,
    PredicateKind.LIFT_UP: 0.15,
    PredicateKind.MOVE_DOWN: 0.15,
    PredicateKind.POKE: 0.06,
}

CUP_AWAY_START_MIN = 0.1
POKE_CUP_TOLERANCE = 0.01
CUP_TOWARD_SLACK = 0.04

TASK_REGISTRY: List[TaskSpec] = [
    TaskSpec(task_id=i, name=kind.value, predicate_kind=kind, threshold=_THRESHOLDS[kind])
    for i, kind in enumerate(PredicateKind)
]
TARGET_TASKS = ("drawer_close", "faucet_right", "cup_away")
# Non-target robot tasks used when target tasks are held out of training.
HELD_OUT_ROBOT_TASKS = ("drawer_open", "cup_toward", "no_motion")

TaskRef = Union[str, int, TaskSpec]


def get_task(ref: TaskRef) -> TaskSpec:
    if isinstance(ref, TaskSpec):
        return ref
    for task in TASK_REGISTRY:
        if task.name == ref or task.task_id == ref:
            return task
    raise ConfigError(f"Unknown task: {ref}")


def tasks_by_name(names: Sequence[str]) -> List[TaskSpec]:
    return [get_task(name) for name in names]


def _object_deltas(first: WorldState, last: WorldState) -> List[float]:
    return [
        abs(last.drawer_openness - first.drawer_openness),
        abs(last.faucet_angle - first.faucet_angle),
        distance(last.cup_pos, first.cup_pos),
    ]


_PREDICATES: Dict[PredicateKind, Callable[[float, WorldState, WorldState], bool]] = {
    PredicateKind.DRAWER_CLOSE: lambda t, a, b: a.drawer_openness >= t and b.drawer_openness < t,
    PredicateKind.DRAWER_OPEN: lambda t, a, b: b.drawer_openness > t,
    PredicateKind.FAUCET_RIGHT: lambda t, a, b: b.faucet_angle - a.faucet_angle > t,
    PredicateKind.FAUCET_LEFT: lambda t, a, b: a.faucet_angle - b.faucet_angle > t,
    PredicateKind.CUP_AWAY: lambda t, a, b: (
        distance(a.cup_pos, a.machine_pos) >= CUP_AWAY_START_MIN
        and distance(b.cup_pos, b.machine_pos) < t
    ),
    PredicateKind.CUP_TOWARD: lambda t, a, b: (
        distance(b.cup_pos, b.machine_pos) > distance(a.cup_pos, a.machine_pos) + t
    ),
    PredicateKind.PUSH_LEFT: lambda t, a, b: a.cup_pos[0] - b.cup_pos[0] > t,
    PredicateKind.PUSH_RIGHT: lambda t, a, b: b.cup_pos[0] - a.cup_pos[0] > t,
    PredicateKind.NO_MOTION: lambda t, a, b: max(_object_deltas(a, b)) < t,
    PredicateKind.LIFT_UP: lambda t, a, b: b.gripper_pos[1] - a.gripper_pos[1] > t,
    PredicateKind.MOVE_DOWN: lambda t, a, b: a.gripper_pos[1] - b.gripper_pos[1] > t,
    PredicateKind.POKE: lambda t, a, b: (
        distance(b.gripper_pos, b.machine_pos) < t
        and distance(b.cup_pos, a.cup_pos) < POKE_CUP_TOLERANCE
    ),
}


def eval_success(task: TaskRef, states: Sequence[WorldState]) -> bool:
    if not states:
        raise ValueError("eval_success needs at least one state")
    task = get_task(task)
    return bool(_PREDICATES[task.predicate_kind](task.threshold, states[0], states[-1]))


def _ratio(achieved: float, required: float) -> float:
    if required <= 1e-9:
        return 1.0
    return min(max(achieved / required, 0.0), 1.0)


def _reach(gripper, target, scale: float = 0.4) -> float:
    return 1.0 - min(distance(gripper, target) / scale, 1.0)


def task_progress(task: TaskRef, states: Sequence[WorldState]) -> float:
    """Shaped ground-truth reward in [0, 1]: task completion plus reaching.

    Completion dominates; reaching towards the relevant contact point breaks
    ties among trajectories that have not touched anything yet. A trajectory
    that satisfies its predicate always scores at least 0.8.
    """
    task = get_task(task)
    first, last = states[0], states[-1]
    kind = task.predicate_kind
    g = last.gripper_pos
    drawer_push_point = (last.drawer_handle[0] + CONTACT_RADIUS / 2, last.drawer_handle[1])
    cup_behind = _behind(last.cup_pos, last.machine_pos)

    if kind == PredicateKind.DRAWER_CLOSE:
        done = _ratio(first.drawer_openness - last.drawer_openness, first.drawer_openness - 0.03)
        reach = _reach(g, drawer_push_point)
    elif kind == PredicateKind.DRAWER_OPEN:
        done = _ratio(last.drawer_openness - first.drawer_openness, 0.10 - DRAWER_INIT)
        reach = _reach(g, last.drawer_handle)
    elif kind in (PredicateKind.FAUCET_RIGHT, PredicateKind.FAUCET_LEFT):
        sign = 1.0 if kind == PredicateKind.FAUCET_RIGHT else -1.0
        done = _ratio(sign * (last.faucet_angle - first.faucet_angle), 2 * task.threshold)
        reach = _reach(g, last.faucet_handle)
    elif kind == PredicateKind.CUP_AWAY:
        start = distance(first.cup_pos, first.machine_pos)
        done = _ratio(start - distance(last.cup_pos, last.machine_pos), start - task.threshold / 2)
        reach = _reach(g, cup_behind)
    elif kind == PredicateKind.CUP_TOWARD:
        start = distance(first.cup_pos, first.machine_pos)
        # Signed: pushing the cup at the machine costs progress.
        gained = distance(last.cup_pos, last.machine_pos) - start + CUP_TOWARD_SLACK
        done = _ratio(gained, 1.5 * task.threshold + CUP_TOWARD_SLACK)
        reach = max(_reach(g, flank) for flank in _flanks(last.cup_pos, last.machine_pos))
    elif kind in (PredicateKind.PUSH_LEFT, PredicateKind.PUSH_RIGHT):
        sign = -1.0 if kind == PredicateKind.PUSH_LEFT else 1.0
        done = _ratio(sign * (last.cup_pos[0] - first.cup_pos[0]), 1.5 * task.threshold)
        reach = _reach(g, (last.cup_pos[0] - sign * 0.05, last.cup_pos[1]))
    elif kind == PredicateKind.NO_MOTION:
        done = 1.0 - _ratio(max(_object_deltas(first, last)), task.threshold)
        reach = _reach(g, first.gripper_pos)
    elif kind in (PredicateKind.LIFT_UP, PredicateKind.MOVE_DOWN):
        sign = 1.0 if kind == PredicateKind.LIFT_UP else -1.0
        done = _ratio(sign * (g[1] - first.gripper_pos[1]), 1.3 * task.threshold)
        reach = done
    else:
        cup_still = distance(last.cup_pos, first.cup_pos) < POKE_CUP_TOLERANCE
        done = _reach(g, last.machine_pos, scale=0.3) if cup_still else 0.0
        reach = _reach(g, last.machine_pos)
    score = 0.8 * done + 0.2 * reach
    if eval_success(task, states):
        score = max(score, 0.8)
    return float(score)


def _behind(obj, goal, offset: float = 0.05):
    """Point `offset` behind `obj` on the line from `goal` through `obj`."""
    d = distance(obj, goal) or 1.0
    return (obj[0] - offset * (goal[0] - obj[0]) / d, obj[1] - offset * (goal[1] - obj[1]) / d)


def _flanks(obj, goal, offset: float = 0.05):
    """The two points `offset` beside `obj`, across the line from `goal` to `obj`."""
    d = distance(obj, goal) or 1.0
    px, py = -(goal[1] - obj[1]) / d, (goal[0] - obj[0]) / d
    return (obj[0] + offset * px, obj[1] + offset * py), (obj[0] - offset * px, obj[1] - offset * py)
