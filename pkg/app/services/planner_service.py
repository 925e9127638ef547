"""Visual model-predictive control with a demo-conditioned reward.

Each round samples G action sequences, predicts their futures, scores the
predicted clips against the demonstration and executes one of the top_k
sequences open-loop in the simulator before replanning from the reached state.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ArtifactIOError
from app.core.logging import JsonStructuredLogger, log_episode
from app.core.protocols import CandidateScorer, Dynamics, StructuredLogger
from app.data.clip_io import write_clip
from app.models.planner import (
    ActionDistribution,
    EpisodeResult,
    EpisodeTrace,
    PlannerConfig,
    PlanResult,
    Predictions,
)
from app.models.world import DomainSpec, TaskSpec, VideoClip, WorldState
from app.sim.render import render
from app.sim.tasks import eval_success
from app.sim.world import HORIZON, actions_from_array, initial_state_for, rollout

STD_FLOOR_FRAC = 1e-3


def sample_action_seqs(dist: ActionDistribution, G: int, H: int, rng: np.random.Generator) -> np.ndarray:
    """(G, H, 3) actions: uniform over the bounds, or the fitted Gaussian clamped to them."""
    if dist.mean is None:
        return rng.uniform(dist.low, dist.high, size=(G, H, 3))
    samples = rng.normal(dist.mean, dist.std, size=(G, *np.shape(dist.mean)))
    return np.clip(samples, dist.low, dist.high)


def ranked_indices(scores: np.ndarray) -> np.ndarray:
    """Candidate indices by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def select_action_seq(scores: np.ndarray, top_k: int, rng: np.random.Generator) -> int:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValueError("cannot select from an empty score list")
    if not 1 <= top_k <= scores.size:
        raise ValueError(f"top_k={top_k} must lie in [1, {scores.size}]")
    pool = ranked_indices(scores)[:top_k]
    return int(pool[int(rng.integers(top_k))])


def cem_refit(
    samples: np.ndarray, scores: np.ndarray, elite_count: int, dist: ActionDistribution
) -> ActionDistribution:
    """Per-timestep, per-dimension Gaussian over the elite_count best samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if not 1 <= elite_count <= samples.shape[0]:
        raise ValueError(f"elite_count={elite_count} must lie in [1, {samples.shape[0]}]")
    elites = samples[ranked_indices(scores)[:elite_count]]
    floor = STD_FLOOR_FRAC * (dist.high - dist.low)
    return ActionDistribution(
        low=dist.low,
        high=dist.high,
        mean=elites.mean(axis=0),
        std=np.maximum(elites.std(axis=0), floor),
    )


def score_candidates(scorer: CandidateScorer, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray:
    return scorer.score(demo, predictions)


def plan_round(
    scorer: CandidateScorer,
    dynamics: Dynamics,
    demo: Optional[VideoClip],
    history: Sequence[np.ndarray],
    state: WorldState,
    config: PlannerConfig,
    rng: np.random.Generator,
    origin: Optional[WorldState] = None,
    round_index: int = 0,
) -> PlanResult:
    dist = ActionDistribution.uniform(config)
    for iteration in range(config.cem_iters):
        action_seqs = sample_action_seqs(dist, config.G, config.H, rng)
        predictions = dynamics.predict_candidates(history, state, action_seqs)
        predictions.context = np.asarray(history[-1])
        predictions.origin = origin
        scores = score_candidates(scorer, demo, predictions)
        if iteration + 1 < config.cem_iters:
            dist = cem_refit(action_seqs, scores, config.elite_count, dist)
    chosen = select_action_seq(scores, config.top_k, rng)
    return PlanResult(
        actions=action_seqs[chosen],
        chosen_index=chosen,
        scores=scores,
        predicted_clip=VideoClip(frames=np.clip(predictions.candidate_frames(chosen), 0.0, 1.0)),
        round=round_index,
    )


def run_episode(
    domain: DomainSpec,
    task: TaskSpec,
    demo: Optional[VideoClip],
    scorer: CandidateScorer,
    dynamics: Dynamics,
    config: PlannerConfig,
    seed: int,
    size: Tuple[int, int] = (32, 32),
    init: Optional[WorldState] = None,
    env_tier: int = 0,
) -> EpisodeResult:
    """`rounds` plan-then-execute rounds, cut short at HORIZON; the task only decides success at the end."""
    rng = np.random.default_rng([config.seed, seed])
    state = init or initial_state_for(domain)
    history: List[np.ndarray] = [render(state, domain, size)]
    states: List[WorldState] = [state]
    plans = []
    for round_index in range(config.rounds):
        remaining = HORIZON - state.time
        if remaining <= 0:
            break
        plan = plan_round(scorer, dynamics, demo, history, state, config, rng, states[0], round_index)
        clip, visited = rollout(state, actions_from_array(plan.actions[:remaining]), domain, size)
        history.extend(clip.frames[1:])
        states.extend(visited[1:])
        state = visited[-1]
        plans.append(plan)
    success = eval_success(task, states)
    log_episode(task.name, env_tier, success, [p.chosen_score for p in plans], dynamics.mode)
    clip = VideoClip(frames=np.stack(history), domain=domain.embodiment, env_tier=env_tier, task_id=task.task_id)
    return EpisodeResult(states=tuple(states), success=success, plans=plans, clip=clip)


def episode_trace(
    episode: EpisodeResult, task: TaskSpec, tier: int, dynamics_mode: str, seed: int, provenance: Dict[str, Any]
) -> EpisodeTrace:
    return EpisodeTrace(
        task=task.name,
        tier=tier,
        dynamics_mode=dynamics_mode,
        seed=seed,
        success=episode.success,
        rounds=[plan.trace_entry() for plan in episode.plans],
        provenance=provenance,
    )


def save_trace(out_dir: Path, name: str, episode: EpisodeResult, trace: EpisodeTrace) -> Path:
    """Executed clip as `<name>.dvdc` plus `<name>.trace.json`."""
    out_dir = Path(out_dir)
    write_clip(episode.clip, out_dir / f"{name}.dvdc")
    path = out_dir / f"{name}.trace.json"
    try:
        path.write_text(json.dumps(trace.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write trace {path}: {e}") from e
    return path


def run_trials(
    domain: DomainSpec,
    task: TaskSpec,
    demos: Sequence[Optional[VideoClip]],
    scorer: CandidateScorer,
    dynamics: Dynamics,
    config: PlannerConfig,
    seeds: Sequence[int],
    size: Tuple[int, int] = (32, 32),
    env_tier: int = 0,
    logger: Optional[StructuredLogger] = None,
) -> List[EpisodeResult]:
    """One episode per (demo, seed); every trial starts from the domain's initial state."""
    logger = logger or JsonStructuredLogger("dvd.planner")
    episodes = []
    for demo, seed in zip(demos, seeds):
        episodes.append(run_episode(domain, task, demo, scorer, dynamics, config, seed, size, env_tier=env_tier))
    logger.info(
        "trials finished",
        task=task.name,
        tier=env_tier,
        successes=sum(e.success for e in episodes),
        trials=len(episodes),
    )
    return episodes


def run_random_episode(
    domain: DomainSpec,
    task: TaskSpec,
    config: PlannerConfig,
    seed: int,
    size: Tuple[int, int] = (32, 32),
    init: Optional[WorldState] = None,
    env_tier: int = 0,
) -> EpisodeResult:
    """Uniform actions over the bounds for as many steps as the planner would execute."""
    rng = np.random.default_rng([config.seed, seed, 1])
    state = init or initial_state_for(domain)
    n_steps = max(min(config.rounds * config.H, HORIZON - state.time), 0)
    dist = ActionDistribution.uniform(config)
    actions = rng.uniform(dist.low, dist.high, size=(n_steps, 3))
    clip, states = rollout(state, actions_from_array(actions), domain, size, env_tier=env_tier)
    clip.task_id = task.task_id
    return EpisodeResult(states=states, success=eval_success(task, states), clip=clip)
