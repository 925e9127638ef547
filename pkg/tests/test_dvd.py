import numpy as np
import pytest
from sklearn.metrics import accuracy_score
from sklearn.neighbors import NearestCentroid

from app.core.exceptions import ConfigError, MissingPrerequisiteError, UsageError
from app.data.sampler import ClipPool
from app.models.data import AugmentSpec, WindowSpec
from app.models.planner import Predictions
from app.models.training import OptimizerConfig, PretrainConfig, TrainConfig
from app.models.world import Domain
from app.scorers.dvd_scorer import DVDScorer
from app.services.dvd_service import (
    evaluate_pair_accuracy,
    load_model,
    load_pretrained,
    pretrain_encoder,
    save_model,
    train_dvd,
)

WINDOW = WindowSpec(min_len=4, max_len=6)
NO_AUGMENT = AugmentSpec(enabled=False)


@pytest.fixture
def two_task_pool(constant_clip):
    def build(seed):
        rng = np.random.default_rng(seed)
        clips = []
        for task_id, value in ((0, 0.2), (2, 0.8)):
            for domain in (Domain.ROBOT, Domain.HUMAN):
                for _ in range(3):
                    clips.append(constant_clip(value + rng.uniform(-0.02, 0.02), task_id=task_id, domain=domain))
        return ClipPool.from_clips(clips)

    return build


def test_zero_initialized_head_scores_one_half(tiny_model, constant_clip):
    assert tiny_model.score(constant_clip(0.2), constant_clip(0.8)) == pytest.approx(0.5)


def test_score_factorizes_through_embeddings(tiny_model, constant_clip):
    head = tiny_model.head
    head.set_parameters({k: v + 0.1 for k, v in head.parameters().items()})
    a, b = constant_clip(0.3), constant_clip(0.6, task_id=2)
    direct = tiny_model.score(a, b)
    factored = tiny_model.score_embeddings(tiny_model.encode(a)[None], tiny_model.encode(b))[0]
    assert direct == pytest.approx(factored)
    assert 0.0 < direct < 1.0


def test_encode_batch_shape(tiny_model, constant_clip):
    embeddings = tiny_model.encode_batch([constant_clip(0.1), constant_clip(0.5, n=30)])
    assert embeddings.shape == (2, 4)


def test_class_probabilities_need_classifier(tiny_model, constant_clip):
    probs = tiny_model.class_probabilities([constant_clip(0.4)])
    assert probs.shape == (1, 2)
    assert probs.sum() == pytest.approx(1.0)
    tiny_model.classifier = None
    with pytest.raises(MissingPrerequisiteError):
        tiny_model.class_probabilities([constant_clip(0.4)])


def test_pretrain_needs_two_classes(constant_clip):
    clips = [constant_clip(0.5, task_id=1, domain=Domain.HUMAN) for _ in range(3)]
    with pytest.raises(ConfigError):
        pretrain_encoder(clips, clips, PretrainConfig(), WINDOW, NO_AUGMENT, frames=4, seed=0)


def test_pretrain_freezes_encoder_and_saves(tmp_path, constant_clip):
    clips = [constant_clip(v, task_id=t, domain=Domain.HUMAN) for t, v in ((3, 0.1), (1, 0.9)) for _ in range(2)]
    config = PretrainConfig(epochs=2, steps_per_epoch=2, batch_size=4, embedding_dim=4, widths=[2])
    result = pretrain_encoder(clips, clips, config, WINDOW, NO_AUGMENT, frames=4, seed=0)
    assert result.class_task_ids == [1, 3]
    assert result.encoder.frozen
    assert len(result.curve) == 2
    assert 0.0 <= result.val_accuracy <= 1.0


def test_training_leaves_encoder_untouched(tiny_model, two_task_pool):
    before = tiny_model.encoder.digest()
    config = TrainConfig(epochs=1, steps_per_epoch=3, batch_size=4, hidden=[16], views_per_clip=2, val_pairs=8)
    result = train_dvd(tiny_model, two_task_pool(0), two_task_pool(1), config, WINDOW, NO_AUGMENT, seed=0)
    assert tiny_model.encoder.digest() == before
    assert set(result.curve[0]) == {"epoch", "train_loss", "train_acc", "val_acc"}


def test_training_is_deterministic(tiny_model, two_task_pool):
    config = TrainConfig(epochs=1, steps_per_epoch=2, batch_size=4, hidden=[16], views_per_clip=0, val_pairs=8)
    initial = {k: v.copy() for k, v in tiny_model.head.parameters().items()}
    first = train_dvd(tiny_model, two_task_pool(0), two_task_pool(1), config, WINDOW, NO_AUGMENT, seed=5)
    tiny_model.head.unfreeze()
    tiny_model.head.set_parameters(initial)
    second = train_dvd(tiny_model, two_task_pool(0), two_task_pool(1), config, WINDOW, NO_AUGMENT, seed=5)
    assert first.curve == second.curve


@pytest.mark.slow
def test_head_learns_same_task_pairs(tiny_model, two_task_pool):
    config = TrainConfig(
        epochs=8,
        steps_per_epoch=50,
        batch_size=24,
        hidden=[16],
        views_per_clip=2,
        val_pairs=40,
        optimizer=OptimizerConfig(learning_rate=0.1),
    )
    result = train_dvd(tiny_model, two_task_pool(0), two_task_pool(1), config, WINDOW, NO_AUGMENT, seed=0)
    assert result.curve[-1]["train_loss"] < result.curve[0]["train_loss"]
    assert result.final_val_accuracy >= 0.75


def test_pair_accuracy_of_constant_scorer(two_task_pool):
    class AlwaysSame:
        def score_pair(self, clip_a, clip_b):
            return 1.0

    assert evaluate_pair_accuracy(AlwaysSame(), two_task_pool(0), n_pairs=20, seed=0) == pytest.approx(0.5)


def test_model_round_trip(tmp_path, tiny_model, constant_clip):
    tiny_model.head.set_parameters({k: v + 0.05 for k, v in tiny_model.head.parameters().items()})
    save_model(tmp_path, tiny_model, {"seed": 0})
    restored = load_model(tmp_path)
    a, b = constant_clip(0.3), constant_clip(0.7)
    assert restored.score(a, b) == tiny_model.score(a, b)
    assert restored.class_task_ids == [0, 2]
    assert restored.head.frozen


def test_missing_artifacts_name_their_stage(tmp_path):
    with pytest.raises(MissingPrerequisiteError, match="pretrain-encoder"):
        load_pretrained(tmp_path)
    with pytest.raises(MissingPrerequisiteError):
        load_model(tmp_path)


def test_dvd_scorer_needs_demo(tiny_model):
    predictions = Predictions(frames=np.full((2, 3, 16, 16, 3), 0.5))
    with pytest.raises(UsageError):
        DVDScorer(tiny_model).score(None, predictions)


@pytest.mark.slow
def test_pretrain_separates_two_tasks(constant_clip):
    rng = np.random.default_rng(3)

    def clips(n):
        return [
            constant_clip(value + rng.uniform(-0.05, 0.05), task_id=task_id, domain=Domain.HUMAN)
            for task_id, value in ((0, 0.2), (2, 0.8))
            for _ in range(n)
        ]

    train, val = clips(12), clips(10)
    # Raw pixels already separate the tasks, so the encoder has something to learn.
    oracle = NearestCentroid().fit([c.frames.ravel() for c in train], [c.task_id for c in train])
    assert accuracy_score([c.task_id for c in val], oracle.predict([c.frames.ravel() for c in val])) == 1.0

    config = PretrainConfig(
        epochs=5,
        steps_per_epoch=20,
        batch_size=8,
        embedding_dim=4,
        widths=[4],
        optimizer=OptimizerConfig(learning_rate=0.05),
    )
    result = pretrain_encoder(train, val, config, WINDOW, NO_AUGMENT, frames=4, seed=0)
    assert result.val_accuracy >= 0.95
