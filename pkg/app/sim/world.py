"""Deterministic 2D tabletop: a drawer, a faucet, a cup and a static machine.

Table coordinates are normalized to [0, 1]^2 with y pointing up. Objects only
respond while the gripper centre lies within `CONTACT_RADIUS` of their handle
(checked at the gripper position before the move):

* drawer: pushing towards the cabinet (dx < 0) closes it; pulling (dx > 0)
  opens it only with a closed grip.
* faucet: follows dx only with a closed grip.
* cup: pushed by the full gripper displacement when moving into it.
"""

import math
from typing import Sequence, Tuple

import numpy as np

from app.core.exceptions import HorizonExceededError
from app.models.world import ActionVec, DomainSpec, Point, VideoClip, WorldState
from app.sim.render import render

HORIZON = 60
CONTACT_RADIUS = 0.06
DRAWER_RANGE = (0.0, 0.10)
FAUCET_RANGE = (-0.05, 0.05)
DRAWER_INIT = 0.07
MACHINE_OFFSET = 0.12

GRIPPER_START: Point = (0.5, 0.52)
TABLE_CENTRE: Point = (0.5, 0.5)
# Home slots; arrangement[i] is the slot of object i in (drawer, faucet, cup).
SLOTS: Tuple[Point, ...] = ((0.30, 0.62), (0.70, 0.62), (0.50, 0.36))


def _clip01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def machine_for(cup_home: Point) -> Point:
    dx, dy = cup_home[0] - TABLE_CENTRE[0], cup_home[1] - TABLE_CENTRE[1]
    norm = math.hypot(dx, dy)
    return (cup_home[0] + MACHINE_OFFSET * dx / norm, cup_home[1] + MACHINE_OFFSET * dy / norm)


def initial_state(
    arrangement: Tuple[int, int, int] = (0, 1, 2),
    distractors: Tuple[Point, ...] = (),
) -> WorldState:
    drawer, faucet, cup = (SLOTS[slot] for slot in arrangement)
    return WorldState(
        gripper_pos=GRIPPER_START,
        grip_closed=False,
        drawer_openness=DRAWER_INIT,
        faucet_angle=0.0,
        cup_pos=cup,
        machine_pos=machine_for(cup),
        drawer_pos=drawer,
        faucet_pos=faucet,
        distractor_pos=tuple(distractors),
        time=0,
    )


def initial_state_for(domain: DomainSpec, distractors: Tuple[Point, ...] = ()) -> WorldState:
    return initial_state(domain.arrangement, distractors)


def step(state: WorldState, action: ActionVec, horizon: int = HORIZON) -> WorldState:
    if state.time >= horizon:
        raise HorizonExceededError(f"cannot step past horizon {horizon} (time={state.time})")
    action = action.clamped()

    grip_closed = state.grip_closed
    if action.grip > 0:
        grip_closed = True
    elif action.grip < 0:
        grip_closed = False

    gx, gy = state.gripper_pos
    nx, ny = _clip01(gx + action.dx), _clip01(gy + action.dy)
    ex, ey = nx - gx, ny - gy

    openness = state.drawer_openness
    if distance(state.gripper_pos, state.drawer_handle) < CONTACT_RADIUS:
        if ex < 0 or (ex > 0 and grip_closed):
            openness = min(max(openness + ex, DRAWER_RANGE[0]), DRAWER_RANGE[1])

    angle = state.faucet_angle
    if grip_closed and distance(state.gripper_pos, state.faucet_handle) < CONTACT_RADIUS:
        angle = min(max(angle + ex, FAUCET_RANGE[0]), FAUCET_RANGE[1])

    cup = state.cup_pos
    if distance(state.gripper_pos, cup) < CONTACT_RADIUS:
        if ex * (cup[0] - gx) + ey * (cup[1] - gy) > 0:
            cup = (_clip01(cup[0] + ex), _clip01(cup[1] + ey))

    return state.evolve(
        gripper_pos=(nx, ny),
        grip_closed=grip_closed,
        drawer_openness=openness,
        faucet_angle=angle,
        cup_pos=cup,
        time=state.time + 1,
    )


def rollout(
    init: WorldState,
    actions: Sequence[ActionVec],
    domain: DomainSpec,
    size: Tuple[int, int] = (32, 32),
    horizon: int = HORIZON,
    env_tier: int = 0,
) -> Tuple[VideoClip, Tuple[WorldState, ...]]:
    if len(actions) > horizon:
        raise HorizonExceededError(f"{len(actions)} actions exceed horizon {horizon}")
    states = [init]
    for action in actions:
        states.append(step(states[-1], action, horizon))
    frames = np.stack([render(s, domain, size) for s in states])
    clip = VideoClip(frames=frames, domain=domain.embodiment, env_tier=env_tier)
    return clip, tuple(states)


def actions_from_array(values: np.ndarray) -> Tuple[ActionVec, ...]:
    return tuple(ActionVec.from_array(row) for row in np.asarray(values).reshape(-1, 3))
