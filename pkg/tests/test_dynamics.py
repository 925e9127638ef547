import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import MissingPrerequisiteError, ShapeError
from app.models.training import DynConfig
from app.nn.gradcheck import relative_error
from app.services.dynamics_service import (
    LearnedDynamics,
    OracleDynamics,
    Predictor,
    collect_random_episodes,
    load_dataset,
    load_predictor,
    oracle_predict,
    pad_context,
    save_dataset,
    save_predictor,
    train_predictor,
)
from app.sim.world import HORIZON, actions_from_array, initial_state, rollout

SIZE = 16


@pytest.fixture
def dyn_config():
    return DynConfig(
        context_frames=2,
        predict_frames=2,
        rollout_limit=4,
        latent_dim=4,
        transition_hidden=6,
        widths=[2, 2],
        n_episodes=3,
        episode_length=8,
        epochs=1,
        steps_per_epoch=2,
        batch_size=2,
        holdout_episodes=1,
    )


@pytest.fixture
def episodes(robot_domain, dyn_config):
    return collect_random_episodes(robot_domain, dyn_config.n_episodes, dyn_config.episode_length, 0, (SIZE, SIZE))


def test_random_episodes_shape_and_bounds(episodes, dyn_config):
    assert len(episodes) == 3
    for frames, actions in episodes.episodes:
        assert frames.shape == (dyn_config.episode_length + 1, SIZE, SIZE, 3)
        assert actions.shape == (dyn_config.episode_length, 3)
        assert np.all(np.abs(actions[:, :2]) <= 0.02)


def test_random_episodes_are_seeded(robot_domain):
    a = collect_random_episodes(robot_domain, 2, 5, 7, (SIZE, SIZE))
    b = collect_random_episodes(robot_domain, 2, 5, 7, (SIZE, SIZE))
    for (fa, aa), (fb, ab) in zip(a.episodes, b.episodes):
        assert np.array_equal(fa, fb)
        assert np.array_equal(aa, ab)


def test_dataset_round_trip(tmp_path, episodes):
    save_dataset(episodes, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.domain == episodes.domain
    for (fa, aa), (fb, ab) in zip(episodes.episodes, loaded.episodes):
        assert np.array_equal(fa, fb)
        assert np.allclose(aa, ab)


def test_missing_dataset_is_missing_prerequisite(tmp_path):
    with pytest.raises(MissingPrerequisiteError):
        load_dataset(tmp_path)


def test_fresh_predictor_copies_last_context_frame(dyn_config, episodes):
    predictor = Predictor(dyn_config, SIZE, seed=0)
    frames, actions = episodes.episodes[0]
    predicted = predictor.predict(frames[:2], actions[1:4])
    assert predicted.shape == (3, SIZE, SIZE, 3)
    for frame in predicted:
        assert np.allclose(frame, np.clip(frames[1], 1e-3, 1 - 1e-3), atol=1e-6)


def test_predict_batch_validates_shapes(dyn_config):
    predictor = Predictor(dyn_config, SIZE)
    context = np.full((2, 2, SIZE, SIZE, 3), 0.5)
    assert predictor.predict_batch(context, np.zeros((2, 4, 3))).shape == (2, 4, SIZE, SIZE, 3)
    assert predictor.predict_batch(context, np.zeros((2, 0, 3))).shape == (2, 0, SIZE, SIZE, 3)
    with pytest.raises(ShapeError):
        predictor.predict_batch(context, np.zeros((2, 5, 3)))
    with pytest.raises(ShapeError):
        predictor.predict_batch(context[:, :1], np.zeros((2, 1, 3)))


def test_backprop_through_time_matches_finite_differences(dyn_config, episodes):
    predictor = Predictor(dyn_config, SIZE, seed=1)
    rng = np.random.default_rng(0)
    for network in predictor.networks.values():
        network.set_parameters({k: v + rng.normal(scale=0.1, size=v.shape) for k, v in network.parameters().items()})
    frames, actions = episodes.episodes[0]
    context, acts, targets = frames[None, :2], actions[None, 1:3] * 20, frames[None, 2:4]
    _, grads = predictor.loss_and_grads(context, acts, targets)

    eps = 1e-5
    for name, network in predictor.networks.items():
        for qualified, param in network.parameters().items():
            flat = param.reshape(-1)
            for index in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                original = flat[index]
                flat[index] = original + eps
                plus, _ = predictor.loss_and_grads(context, acts, targets)
                flat[index] = original - eps
                minus, _ = predictor.loss_and_grads(context, acts, targets)
                flat[index] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = grads[name][qualified].reshape(-1)[index]
                assert relative_error(np.array([analytic]), np.array([numeric])) < 1e-4, (name, qualified)


def test_train_predictor_reports_copy_baseline(dyn_config, episodes):
    result = train_predictor(episodes, dyn_config, seed=0)
    assert len(result.curve) == 1
    assert result.copy_mse > 0.0
    assert np.isfinite(result.holdout_mse)


def test_predictor_round_trip(tmp_path, dyn_config, episodes):
    predictor = Predictor(dyn_config, SIZE, seed=3)
    save_predictor(tmp_path, predictor, {"seed": 0})
    restored = load_predictor(tmp_path)
    frames, actions = episodes.episodes[1]
    assert np.array_equal(restored.predict(frames[:2], actions[:3]), predictor.predict(frames[:2], actions[:3]))


def test_missing_predictor_is_missing_prerequisite(tmp_path):
    with pytest.raises(MissingPrerequisiteError, match="train-dynamics"):
        load_predictor(tmp_path)


def test_pad_context_repeats_first_frame():
    history = [np.full((4, 4, 3), 0.1), np.full((4, 4, 3), 0.9)]
    padded = pad_context(history, 4)
    assert padded.shape == (4, 4, 4, 3)
    assert np.all(padded[:3] == 0.1) and np.all(padded[3] == 0.9)
    with pytest.raises(ShapeError):
        pad_context([], 2)


def test_oracle_matches_simulator(robot_domain):
    state = initial_state()
    actions = np.tile([0.01, -0.02, 1.0], (4, 1))
    clip, _ = rollout(state, actions_from_array(actions), robot_domain, (SIZE, SIZE))
    assert np.array_equal(oracle_predict(state, actions, robot_domain, (SIZE, SIZE)), clip.frames[1:])


def test_oracle_dynamics_returns_states(robot_domain):
    dynamics = OracleDynamics(robot_domain, (SIZE, SIZE))
    seqs = np.zeros((3, 5, 3))
    predictions = dynamics.predict_candidates([], initial_state(), seqs)
    assert predictions.frames.shape == (3, 5, SIZE, SIZE, 3)
    assert len(predictions.states[0]) == 6


def test_learned_dynamics_chunks_candidates(dyn_config):
    dynamics = LearnedDynamics(Predictor(dyn_config, SIZE))
    history = [np.full((SIZE, SIZE, 3), 0.4)]
    predictions = dynamics.predict_candidates(history, None, np.zeros((30, 3, 3)))
    assert predictions.frames.shape == (30, 3, SIZE, SIZE, 3)
    assert predictions.states is None


def test_interaction_episodes_fit_the_world_horizon():
    assert DynConfig(episode_length=HORIZON).episode_length == HORIZON
    with pytest.raises(ValidationError):
        DynConfig(episode_length=HORIZON + 1)
