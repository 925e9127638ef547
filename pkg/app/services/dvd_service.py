"""DVD reward model: encoder pretraining, similarity-head training, scoring."""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score

from app.core.exceptions import (
    ConfigError,
    InsufficientDataError,
    MissingPrerequisiteError,
    NumericError,
    UsageError,
)
from app.core.logging import JsonStructuredLogger, log_epoch, log_stage
from app.core.protocols import PairScorer, StructuredLogger
from app.data.sampler import ClipPool, make_batch, process_clip, sample_triplet
from app.data.transforms import center_crop, temporal_resample, to_network_input
from app.models.data import AugmentSpec, WindowSpec
from app.models.network import (
    BatchNormSpec,
    Conv3dSpec,
    FullyConnectedSpec,
    NetworkSpec,
    ReluSpec,
    SigmoidSpec,
    SoftmaxSpec,
    SpatialPoolSpec,
)
from app.models.training import OptimizerConfig, PretrainConfig, TrainConfig
from app.models.world import VideoClip
from app.nn.checkpoint import load_network, save_checkpoint, save_network
from app.nn.losses import bce_pair_loss_and_grad, cross_entropy
from app.nn.network import EVAL, TRAIN, Network
from app.nn.optim import OptimizerState, apply_step

ENCODER_FILE = "encoder.dvdw"
CLASSIFIER_FILE = "classifier.dvdw"
HEAD_FILE = "head.dvdw"
ENCODE_CHUNK = 32


def make_optimizer(config: OptimizerConfig) -> OptimizerState:
    return OptimizerState(
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def encoder_spec(frames: int, size: int, widths: Sequence[int], embedding_dim: int) -> NetworkSpec:
    """Conv(3x5x5) then conv(3x3x3) blocks, spatial stride 2, BN+ReLU each, pooled FC embedding."""
    layers: List[Any] = []
    for i, width in enumerate(widths):
        kernel = (3, 5, 5) if i == 0 else (3, 3, 3)
        layers += [
            Conv3dSpec(kernel=kernel, stride=(1, 2, 2), out_channels=width, bias=False),
            BatchNormSpec(),
            ReluSpec(),
        ]
    layers += [SpatialPoolSpec(), FullyConnectedSpec(out_dim=embedding_dim)]
    return NetworkSpec(
        name="encoder", input_shape=(3, frames, size, size), layers=layers, output_dim=embedding_dim
    )


def classifier_spec(embedding_dim: int, classes: int) -> NetworkSpec:
    return NetworkSpec(
        name="classifier",
        input_shape=(embedding_dim,),
        layers=[FullyConnectedSpec(out_dim=classes), SoftmaxSpec()],
        output_dim=classes,
    )


def head_spec(embedding_dim: int, hidden: Sequence[int]) -> NetworkSpec:
    layers: List[Any] = []
    for width in hidden:
        layers += [FullyConnectedSpec(out_dim=width), ReluSpec()]
    layers += [FullyConnectedSpec(out_dim=1, zero_init=True), SigmoidSpec()]
    return NetworkSpec(name="similarity_head", input_shape=(2 * embedding_dim,), layers=layers, output_dim=1)


@dataclass
class DVDModel:
    """R(a, b) = f_sim(f_enc(a), f_enc(b)); argument order is (candidate, demo)."""

    encoder: Network
    head: Network
    frames: int = 16
    crop_frac: float = 0.9
    classifier: Optional[Network] = None
    class_task_ids: List[int] = field(default_factory=list)

    @property
    def embedding_dim(self) -> int:
        return self.encoder.spec.output_dim

    def preprocess(self, clip: VideoClip) -> VideoClip:
        return temporal_resample(center_crop(clip, self.crop_frac), self.frames)

    def embed_processed(self, clips: Sequence[VideoClip]) -> np.ndarray:
        if not clips:
            return np.zeros((0, self.embedding_dim))
        chunks = [
            self.encoder.forward(to_network_input(clips[i : i + ENCODE_CHUNK]), EVAL)[0]
            for i in range(0, len(clips), ENCODE_CHUNK)
        ]
        return np.concatenate(chunks, axis=0)

    def encode_batch(self, clips: Sequence[VideoClip]) -> np.ndarray:
        return self.embed_processed([self.preprocess(c) for c in clips])

    def encode(self, clip: VideoClip) -> np.ndarray:
        return self.encode_batch([clip])[0]

    def score_embeddings(self, candidates: np.ndarray, demos: np.ndarray) -> np.ndarray:
        candidates = np.atleast_2d(candidates)
        demos = np.broadcast_to(np.atleast_2d(demos), candidates.shape)
        return self.head.forward(np.concatenate([candidates, demos], axis=1), EVAL)[0][:, 0]

    def score(self, clip_a: VideoClip, clip_b: VideoClip) -> float:
        embeddings = self.encode_batch([clip_a, clip_b])
        return float(self.score_embeddings(embeddings[:1], embeddings[1:])[0])

    def score_pair(self, clip_a: VideoClip, clip_b: VideoClip) -> float:
        return self.score(clip_a, clip_b)

    def class_probabilities(self, clips: Sequence[VideoClip]) -> np.ndarray:
        if self.classifier is None:
            raise MissingPrerequisiteError("pretrain-encoder", stage="classifier-reward")
        return self.classifier.forward(self.encode_batch(clips), EVAL)[0]


@dataclass
class PretrainResult:
    encoder: Network
    classifier: Network
    class_task_ids: List[int]
    val_accuracy: float
    curve: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class TrainResult:
    model: DVDModel
    curve: List[Dict[str, float]] = field(default_factory=list)

    @property
    def final_val_accuracy(self) -> float:
        return self.curve[-1]["val_acc"] if self.curve else 0.0


def _classify_accuracy(
    encoder: Network, classifier: Network, clips: Sequence[VideoClip], labels: np.ndarray, crop_frac: float, frames: int
) -> float:
    if not clips:
        return 0.0
    processed = [temporal_resample(center_crop(c, crop_frac), frames) for c in clips]
    probs = np.concatenate(
        [
            classifier.forward(encoder.forward(to_network_input(processed[i : i + ENCODE_CHUNK]), EVAL)[0], EVAL)[0]
            for i in range(0, len(processed), ENCODE_CHUNK)
        ]
    )
    return float(accuracy_score(labels, np.argmax(probs, axis=1)))


def pretrain_encoder(
    train_clips: Sequence[VideoClip],
    val_clips: Sequence[VideoClip],
    config: PretrainConfig,
    window: WindowSpec,
    augment_spec: AugmentSpec,
    frames: int,
    seed: int,
    logger: Optional[StructuredLogger] = None,
) -> PretrainResult:
    """K-way task classification on human clips; the encoder is frozen afterwards."""
    logger = logger or JsonStructuredLogger("dvd.pretrain")
    class_task_ids = sorted({c.task_id for c in train_clips if c.task_id is not None})
    if len(class_task_ids) < 2:
        raise ConfigError("encoder pretraining needs at least two task classes", stage="pretrain-encoder")
    label_of = {task_id: i for i, task_id in enumerate(class_task_ids)}
    by_class: Dict[int, List[VideoClip]] = {i: [] for i in range(len(class_task_ids))}
    for clip in train_clips:
        by_class[label_of[clip.task_id]].append(clip)

    size = train_clips[0].frame_size[0]
    encoder = Network(encoder_spec(frames, size, config.widths, config.embedding_dim), seed=seed)
    classifier = Network(classifier_spec(config.embedding_dim, len(class_task_ids)), seed=seed + 1)
    enc_opt = make_optimizer(config.optimizer)
    cls_opt = make_optimizer(config.optimizer)
    val_kept = [c for c in val_clips if c.task_id in label_of]
    val_labels = np.array([label_of[c.task_id] for c in val_kept])

    start = time.perf_counter()
    curve = []
    step = 0
    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.steps_per_epoch):
            rng = np.random.default_rng([seed, step])
            labels = rng.integers(len(class_task_ids), size=config.batch_size)
            batch = []
            for label in labels:
                members = by_class[int(label)]
                clip = members[int(rng.integers(len(members)))]
                batch.append(process_clip(clip, window, augment_spec, frames, rng))
            embeddings, enc_cache = encoder.forward(to_network_input(batch), TRAIN)
            probs, cls_cache = classifier.forward(embeddings, TRAIN)
            loss, grad = cross_entropy(probs, labels)
            cls_grads, grad_embeddings = classifier.backward(cls_cache, grad)
            enc_grads, _ = encoder.backward(enc_cache, grad_embeddings)
            apply_step(classifier, cls_grads, cls_opt)
            apply_step(encoder, enc_grads, enc_opt)
            losses.append(loss)
            step += 1
        val_acc = _classify_accuracy(encoder, classifier, val_kept, val_labels, augment_spec.crop_frac, frames)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": val_acc}
        curve.append(entry)
        log_epoch("pretrain-encoder", epoch, train_loss=entry["train_loss"], val_acc=val_acc)

    encoder.freeze()
    classifier.freeze()
    val_accuracy = curve[-1]["val_acc"] if curve else 0.0
    log_stage("pretrain-encoder", (time.perf_counter() - start) * 1000, val_accuracy=val_accuracy)
    logger.info("encoder frozen", digest=encoder.digest(), classes=len(class_task_ids))
    return PretrainResult(encoder, classifier, class_task_ids, val_accuracy, curve)


def new_dvd_model(
    pretrained: PretrainResult, hidden: Sequence[int], frames: int, crop_frac: float, seed: int
) -> DVDModel:
    head = Network(head_spec(pretrained.encoder.spec.output_dim, hidden), seed=seed)
    return DVDModel(
        encoder=pretrained.encoder,
        head=head,
        frames=frames,
        crop_frac=crop_frac,
        classifier=pretrained.classifier,
        class_task_ids=list(pretrained.class_task_ids),
    )


class EmbeddingViewCache:
    """Fixed augmented views per pool clip, embedded once through the frozen encoder."""

    def __init__(
        self,
        model: DVDModel,
        pool: ClipPool,
        views: int,
        window: WindowSpec,
        augment_spec: AugmentSpec,
        seed: int,
    ):
        self.views = views
        self._index: Dict[int, int] = {}
        clips = []
        for domain in pool.domains():
            for index, clip in pool.entries(domain):
                self._index[id(clip)] = index
                clips.append((index, clip))
        self._embeddings: Dict[int, np.ndarray] = {}
        for index, clip in clips:
            rng = np.random.default_rng([seed, index, 104729])
            processed = [process_clip(clip, window, augment_spec, model.frames, rng) for _ in range(views)]
            self._embeddings[index] = model.embed_processed(processed)

    def lookup(self, clip: VideoClip, rng: np.random.Generator) -> np.ndarray:
        return self._embeddings[self._index[id(clip)]][int(rng.integers(self.views))]


def _draw_pairs(pool: ClipPool, n_pairs: int, rng: np.random.Generator) -> List[Tuple[VideoClip, VideoClip, bool]]:
    """Balanced same-task/different-task pairs over all clips of the pool."""
    by_task: Dict[int, List[VideoClip]] = {}
    for domain in pool.domains():
        for _, clip in pool.entries(domain):
            by_task.setdefault(clip.task_id, []).append(clip)
    tasks = sorted(by_task)
    if len(tasks) < 2:
        raise InsufficientDataError("pair evaluation needs at least two tasks")
    pairable = [t for t in tasks if len(by_task[t]) >= 2]
    pairs = []
    for i in range(n_pairs):
        if i % 2 == 0 and pairable:
            task = pairable[int(rng.integers(len(pairable)))]
            a, b = rng.choice(len(by_task[task]), size=2, replace=False)
            pairs.append((by_task[task][int(a)], by_task[task][int(b)], True))
        else:
            ta, tb = rng.choice(len(tasks), size=2, replace=False)
            clips_a, clips_b = by_task[tasks[int(ta)]], by_task[tasks[int(tb)]]
            pairs.append(
                (clips_a[int(rng.integers(len(clips_a)))], clips_b[int(rng.integers(len(clips_b)))], False)
            )
    return pairs


def evaluate_pair_accuracy(scorer: PairScorer, pool: ClipPool, n_pairs: int, seed: int) -> float:
    """Fraction of balanced pairs on the correct side of 0.5 (ties count as "same")."""
    rng = np.random.default_rng([seed, 7])
    pairs = _draw_pairs(pool, n_pairs, rng)
    if isinstance(scorer, DVDModel):
        unique = {id(c): c for a, b, _ in pairs for c in (a, b)}
        keys = list(unique)
        embedded = dict(zip(keys, scorer.encode_batch([unique[k] for k in keys])))
        scores = scorer.score_embeddings(
            np.stack([embedded[id(a)] for a, _, _ in pairs]),
            np.stack([embedded[id(b)] for _, b, _ in pairs]),
        )
    else:
        scores = np.array([scorer.score_pair(a, b) for a, b, _ in pairs])
    truth = np.array([same for _, _, same in pairs])
    return float(accuracy_score(truth, scores >= 0.5))


def _head_step(
    model: DVDModel, anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray, opt: OptimizerState
) -> Tuple[float, float]:
    inputs = np.concatenate(
        [np.concatenate([anchors, positives], axis=1), np.concatenate([anchors, negatives], axis=1)]
    )
    scores, cache = model.head.forward(inputs, TRAIN)
    n = anchors.shape[0]
    s_pos, s_neg = scores[:n, 0], scores[n:, 0]
    loss, g_pos, g_neg = bce_pair_loss_and_grad(s_pos, s_neg)
    grads, _ = model.head.backward(cache, np.concatenate([g_pos, g_neg])[:, None])
    apply_step(model.head, grads, opt)
    correct = np.concatenate([s_pos >= 0.5, s_neg < 0.5])
    return loss, float(np.mean(correct))


def train_dvd(
    model: DVDModel,
    pool: ClipPool,
    val_pool: ClipPool,
    config: TrainConfig,
    window: WindowSpec,
    augment_spec: AugmentSpec,
    seed: int,
    checkpoint_path: Optional[Path] = None,
    logger: Optional[StructuredLogger] = None,
) -> TrainResult:
    """Minimize the mean pair cross-entropy over triplets; only the head is updated."""
    logger = logger or JsonStructuredLogger("dvd.train")
    model.encoder.freeze()
    encoder_digest = model.encoder.digest()
    opt = make_optimizer(config.optimizer)
    cache = None
    if config.views_per_clip > 0:
        cache = EmbeddingViewCache(model, pool, config.views_per_clip, window, augment_spec, seed)
        logger.info("embedding views cached", clips=pool.size(), views=config.views_per_clip)

    start = time.perf_counter()
    curve = []
    step = 0
    last_good = {k: v.copy() for k, v in model.head.parameters().items()}
    for epoch in range(config.epochs):
        losses, accs = [], []
        for _ in range(config.steps_per_epoch):
            rng = np.random.default_rng([seed, step])
            try:
                if cache is not None:
                    triplets = [sample_triplet(pool, rng) for _ in range(config.batch_size)]
                    anchors = np.stack([cache.lookup(t.anchor, rng) for t in triplets])
                    positives = np.stack([cache.lookup(t.positive, rng) for t in triplets])
                    negatives = np.stack([cache.lookup(t.negative, rng) for t in triplets])
                else:
                    batch = make_batch(pool, rng, config.batch_size, window, augment_spec, model.frames)
                    embedded = model.embed_processed(
                        [t.anchor for t in batch] + [t.positive for t in batch] + [t.negative for t in batch]
                    )
                    b = config.batch_size
                    anchors, positives, negatives = embedded[:b], embedded[b : 2 * b], embedded[2 * b :]
                loss, acc = _head_step(model, anchors, positives, negatives, opt)
            except NumericError:
                model.head.set_parameters(last_good)
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model.head, opt, step)
                raise
            last_good = {k: v.copy() for k, v in model.head.parameters().items()}
            losses.append(loss)
            accs.append(acc)
            step += 1
        val_acc = evaluate_pair_accuracy(model, val_pool, config.val_pairs, seed)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_acc": float(np.mean(accs)),
            "val_acc": val_acc,
        }
        curve.append(entry)
        log_epoch("train-dvd", epoch, **{k: v for k, v in entry.items() if k != "epoch"})

    if model.encoder.digest() != encoder_digest:
        raise UsageError("frozen encoder changed during head training")
    log_stage("train-dvd", (time.perf_counter() - start) * 1000, val_acc=curve[-1]["val_acc"])
    return TrainResult(model=model, curve=curve)


def save_pretrained(
    out_dir: Path, result: PretrainResult, frames: int, crop_frac: float, provenance: Dict[str, Any]
) -> None:
    meta = {
        "provenance": provenance,
        "frames": frames,
        "crop_frac": crop_frac,
        "class_task_ids": result.class_task_ids,
        "val_accuracy": result.val_accuracy,
    }
    save_network(out_dir / ENCODER_FILE, result.encoder, meta)
    save_network(out_dir / CLASSIFIER_FILE, result.classifier, meta)


def load_pretrained(encoder_dir: Path) -> PretrainResult:
    encoder, meta = load_network(Path(encoder_dir) / ENCODER_FILE, "pretrain-encoder")
    classifier, _ = load_network(Path(encoder_dir) / CLASSIFIER_FILE, "pretrain-encoder")
    return PretrainResult(encoder, classifier, list(meta["class_task_ids"]), float(meta["val_accuracy"]))


def save_model(out_dir: Path, model: DVDModel, provenance: Dict[str, Any]) -> Path:
    meta = {
        "provenance": provenance,
        "frames": model.frames,
        "crop_frac": model.crop_frac,
        "class_task_ids": model.class_task_ids,
    }
    save_network(out_dir / ENCODER_FILE, model.encoder, meta)
    if model.classifier is not None:
        save_network(out_dir / CLASSIFIER_FILE, model.classifier, meta)
    save_network(out_dir / HEAD_FILE, model.head, meta)
    return out_dir


def load_model(model_dir: Path) -> DVDModel:
    model_dir = Path(model_dir)
    encoder, meta = load_network(model_dir / ENCODER_FILE, "pretrain-encoder")
    head, _ = load_network(model_dir / HEAD_FILE, "train-dvd")
    classifier = None
    if (model_dir / CLASSIFIER_FILE).exists():
        classifier, _ = load_network(model_dir / CLASSIFIER_FILE, "pretrain-encoder")
    return DVDModel(
        encoder=encoder,
        head=head,
        frames=int(meta["frames"]),
        crop_frac=float(meta["crop_frac"]),
        classifier=classifier,
        class_task_ids=list(meta.get("class_task_ids", [])),
    )
