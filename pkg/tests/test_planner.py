import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import chisquare

from app.core.exceptions import UnsupportedTaskError, UsageError
from app.core.logging import JsonStructuredLogger
from app.models.bench import MethodKind
from app.models.planner import ActionDistribution, PlannerConfig, Predictions
from app.scorers.classifier_scorer import ClassifierRewardScorer
from app.scorers.factory import ScorerFactory
from app.scorers.progress_scorer import ProgressScorer
from app.services.dynamics_service import OracleDynamics
from app.services.planner_service import (
    cem_refit,
    episode_trace,
    plan_round,
    ranked_indices,
    run_episode,
    run_random_episode,
    sample_action_seqs,
    save_trace,
    select_action_seq,
)
from app.sim.render import render
from app.sim.tasks import HELD_OUT_ROBOT_TASKS, TARGET_TASKS, eval_success, get_task, task_progress
from app.sim.world import HORIZON, initial_state

SIZE = (16, 16)


@pytest.fixture
def small_planner():
    return PlannerConfig(G=8, H=4, rounds=2, top_k=1, elite_count=3)


def test_ranking_breaks_ties_by_index():
    assert ranked_indices(np.array([1.0, 3.0, 3.0, 0.0])).tolist() == [1, 2, 0, 3]


def test_top1_selects_first_best():
    rng = np.random.default_rng(0)
    assert select_action_seq(np.array([0.5, 0.9, 0.9]), 1, rng) == 1


def test_top_k_stays_within_best():
    rng = np.random.default_rng(0)
    scores = np.array([0.1, 0.7, 0.2, 0.9, 0.3])
    picks = {select_action_seq(scores, 2, rng) for _ in range(50)}
    assert picks == {1, 3}


@pytest.mark.parametrize("top_k", [0, 4])
def test_top_k_out_of_range(top_k):
    with pytest.raises(ValueError):
        select_action_seq(np.array([0.1, 0.2, 0.3]), top_k, np.random.default_rng(0))


def test_planner_config_validation():
    with pytest.raises(ValidationError):
        PlannerConfig(G=4, top_k=5)
    with pytest.raises(ValidationError):
        PlannerConfig(G=4, top_k=1, elite_count=5)


def test_uniform_samples_respect_bounds(small_planner):
    dist = ActionDistribution.uniform(small_planner)
    seqs = sample_action_seqs(dist, 50, 6, np.random.default_rng(1))
    assert seqs.shape == (50, 6, 3)
    assert np.all(seqs >= dist.low) and np.all(seqs <= dist.high)


def test_cem_refit_floors_std():
    config = PlannerConfig(G=4, top_k=1, elite_count=2)
    dist = ActionDistribution.uniform(config)
    samples = np.zeros((4, 2, 3))
    refit = cem_refit(samples, np.arange(4.0), 2, dist)
    assert np.allclose(refit.mean, 0.0)
    assert np.allclose(refit.std, 1e-3 * (dist.high - dist.low))
    with pytest.raises(ValueError):
        cem_refit(samples, np.arange(4.0), 5, dist)


def test_cem_converges_on_quadratic():
    config = PlannerConfig(G=200, top_k=1, elite_count=20)
    dist = ActionDistribution.uniform(config)
    target = np.array([0.01, -0.01, 0.5])
    rng = np.random.default_rng(3)
    for _ in range(6):
        samples = sample_action_seqs(dist, config.G, 2, rng)
        scores = -np.sum(((samples - target) / (dist.high - dist.low)) ** 2, axis=(1, 2))
        dist = cem_refit(samples, scores, config.elite_count, dist)
    assert np.all(np.abs(dist.mean - target) < 0.1 * (dist.high - dist.low))


def test_progress_scorer_needs_states():
    scorer = ProgressScorer(get_task("drawer_close"))
    with pytest.raises(UsageError):
        scorer.score(None, Predictions(frames=np.zeros((2, 3, 16, 16, 3))))


def test_factory_rejects_non_planning_methods(logger):
    factory = ScorerFactory(logger)
    with pytest.raises(UsageError):
        factory.create(MethodKind.RANDOM, get_task("drawer_close"))
    assert isinstance(factory.create(MethodKind.PROGRESS, get_task("poke")), ProgressScorer)


def test_classifier_reward_limited_to_its_classes(tiny_model):
    with pytest.raises(UnsupportedTaskError):
        ClassifierRewardScorer(tiny_model, get_task(1))
    scorer = ClassifierRewardScorer(tiny_model, get_task(2), logger=JsonStructuredLogger("dvd.tests"))
    scores = scorer.score(None, Predictions(frames=np.full((3, 4, 16, 16, 3), 0.5)))
    assert scores.shape == (3,)
    assert np.all((scores > 0) & (scores < 1))


def test_plan_round_picks_best_progress(robot_domain, small_planner):
    task = get_task("drawer_close")
    state = initial_state()
    plan = plan_round(
        ProgressScorer(task),
        OracleDynamics(robot_domain, SIZE),
        None,
        [render(state, robot_domain, SIZE)],
        state,
        small_planner,
        np.random.default_rng(0),
        origin=state,
    )
    assert plan.actions.shape == (small_planner.H, 3)
    assert plan.chosen_score == pytest.approx(plan.scores.max())
    assert plan.predicted_clip.n_frames == small_planner.H + 1


def test_episode_runs_rounds_times_h_steps(robot_domain, small_planner):
    task = get_task("drawer_close")
    scorer = ProgressScorer(task)
    dynamics = OracleDynamics(robot_domain, SIZE)
    episode = run_episode(robot_domain, task, None, scorer, dynamics, small_planner, seed=4, size=SIZE)
    assert episode.n_actions == small_planner.rounds * small_planner.H
    assert episode.clip.n_frames == episode.n_actions + 1
    assert len(episode.plans) == small_planner.rounds
    again = run_episode(robot_domain, task, None, scorer, dynamics, small_planner, seed=4, size=SIZE)
    assert again.states == episode.states


def test_progress_planning_beats_standing_still(robot_domain):
    task = get_task("drawer_close")
    config = PlannerConfig(G=40, H=8, rounds=3, top_k=1)
    episode = run_episode(
        robot_domain, task, None, ProgressScorer(task), OracleDynamics(robot_domain, SIZE), config, seed=0, size=SIZE
    )
    start = episode.states[0]
    assert task_progress(task, episode.states) > task_progress(task, [start, start])


def test_trace_written_next_to_clip(tmp_path, robot_domain, small_planner):
    task = get_task("faucet_right")
    episode = run_episode(
        robot_domain, task, None, ProgressScorer(task), OracleDynamics(robot_domain, SIZE), small_planner, 1, SIZE
    )
    trace = episode_trace(episode, task, 0, "oracle", 1, {"seed": 0})
    path = save_trace(tmp_path, "faucet_right_tier0_trial000", episode, trace)
    assert path.name == "faucet_right_tier0_trial000.trace.json"
    assert (tmp_path / "faucet_right_tier0_trial000.dvdc").exists()
    assert len(trace.rounds) == small_planner.rounds


def test_random_episode_matches_planner_length(robot_domain, small_planner):
    episode = run_random_episode(robot_domain, get_task("cup_away"), small_planner, seed=2, size=SIZE)
    assert episode.n_actions == small_planner.rounds * small_planner.H
    assert episode.clip.task_id == get_task("cup_away").task_id


@pytest.mark.slow
def test_top_k_is_uniform_over_ties():
    rng = np.random.default_rng(7)
    scores = np.full(8, 0.5)
    picks = [select_action_seq(scores, 5, rng) for _ in range(10_000)]
    counts = np.bincount(picks, minlength=8)
    assert counts[5:].sum() == 0
    assert chisquare(counts[:5]).pvalue > 0.01


def test_scores_follow_candidates_under_permutation(robot_domain):
    task = get_task("drawer_close")
    state = initial_state()
    config = PlannerConfig(G=12, H=6, top_k=1, elite_count=4)
    seqs = sample_action_seqs(ActionDistribution.uniform(config), config.G, config.H, np.random.default_rng(8))
    perm = np.random.default_rng(9).permutation(config.G)
    dynamics = OracleDynamics(robot_domain, SIZE)

    def scores_for(candidates):
        predictions = dynamics.predict_candidates([render(state, robot_domain, SIZE)], state, candidates)
        predictions.origin = state
        return ProgressScorer(task).score(None, predictions)

    scores = scores_for(seqs)
    permuted = scores_for(seqs[perm])
    assert np.array_equal(permuted, scores[perm])
    assert len(np.unique(scores)) == config.G
    best = select_action_seq(scores, 1, np.random.default_rng(0))
    best_permuted = select_action_seq(permuted, 1, np.random.default_rng(0))
    assert perm[best_permuted] == best


def test_degenerate_bounds_sample_without_nan():
    config = PlannerConfig(G=6, top_k=1, elite_count=3, action_low=(-0.02, 0.01, 0.5), action_high=(0.02, 0.01, 0.5))
    dist = ActionDistribution.uniform(config)
    rng = np.random.default_rng(0)
    seqs = sample_action_seqs(dist, config.G, 4, rng)
    refit = cem_refit(seqs, np.arange(6.0), config.elite_count, dist)
    resampled = sample_action_seqs(refit, config.G, 4, rng)
    for batch in (seqs, resampled):
        assert not np.any(np.isnan(batch))
        assert np.all(batch[..., 1] == 0.01) and np.all(batch[..., 2] == 0.5)


def test_episode_stops_at_world_horizon(robot_domain):
    task = get_task("faucet_right")
    config = PlannerConfig(G=4, H=25, rounds=3, top_k=1, elite_count=2)
    episode = run_episode(
        robot_domain, task, None, ProgressScorer(task), OracleDynamics(robot_domain, SIZE), config, seed=0, size=SIZE
    )
    assert episode.n_actions == HORIZON
    assert episode.states[-1].time == HORIZON
    assert episode.clip.n_frames == HORIZON + 1
    random_episode = run_random_episode(robot_domain, task, config, seed=0, size=SIZE)
    assert random_episode.n_actions == HORIZON


def test_oracle_holds_still_past_horizon(robot_domain):
    state = initial_state().evolve(time=HORIZON - 3)
    seqs = np.full((2, 8, 3), 0.02)
    predictions = OracleDynamics(robot_domain, SIZE).predict_candidates([], state, seqs)
    assert predictions.frames.shape[:2] == (2, 8)
    for visited in predictions.states:
        assert len(visited) == 9
        assert max(s.time for s in visited) == HORIZON
        assert visited[3:] == (visited[3],) * 6
    assert np.array_equal(predictions.frames[:, 2], predictions.frames[:, -1])


@pytest.mark.slow
@pytest.mark.parametrize("task_name", TARGET_TASKS + HELD_OUT_ROBOT_TASKS)
def test_oracle_progress_ceiling(robot_domain, task_name):
    task = get_task(task_name)
    scorer = ProgressScorer(task)
    dynamics = OracleDynamics(robot_domain, SIZE)
    successes = sum(
        eval_success(task, run_episode(robot_domain, task, None, scorer, dynamics, PlannerConfig(), seed, SIZE).states)
        for seed in range(10)
    )
    assert successes >= 9
