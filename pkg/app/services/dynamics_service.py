"""Action-conditioned frame prediction and the simulator-backed oracle.

The learned predictor encodes stacked context frames into a latent, advances
it with a residual action-conditioned transition, and decodes each latent to
a frame as sigmoid(decoder(z) + logit(last context frame)).
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.core.exceptions import ArtifactIOError, ConfigError, FormatError, MissingPrerequisiteError, ShapeError
from app.core.logging import JsonStructuredLogger, log_epoch, log_stage
from app.core.protocols import StructuredLogger
from app.data.clip_io import read_clip, write_clip
from app.data.manifest import read_actions, write_actions
from app.models.network import (
    Conv3dSpec,
    ConvTranspose3dSpec,
    FlattenSpec,
    FullyConnectedSpec,
    NetworkSpec,
    ReluSpec,
    ReshapeSpec,
)
from app.models.planner import DynamicsMode, Predictions, PlannerConfig
from app.models.training import DynConfig
from app.models.world import DomainSpec, VideoClip, WorldState
from app.nn.checkpoint import load_network, save_network
from app.nn.losses import mse
from app.nn.network import EVAL, TRAIN, Network
from app.nn.optim import OptimizerState, apply_step
from app.sim.world import HORIZON, actions_from_array, initial_state_for, rollout

LOGIT_EPS = 1e-3
PREDICT_CHUNK = 25
DATASET_FILE = "dataset.json"
NETWORK_FILES = {"encoder": "dyn_encoder.dvdw", "transition": "dyn_transition.dvdw", "decoder": "dyn_decoder.dvdw"}


@dataclass
class InteractionDataset:
    episodes: List[Tuple[np.ndarray, np.ndarray]]
    domain: DomainSpec
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)


def collect_random_episodes(
    domain: DomainSpec,
    n: int,
    length: int,
    seed: int,
    size: Tuple[int, int] = (32, 32),
    bounds: Optional[PlannerConfig] = None,
) -> InteractionDataset:
    """Uniform-random actions from randomized gripper starts."""
    if n < 1:
        raise ValueError("n must be at least 1")
    bounds = bounds or PlannerConfig()
    low, high = np.asarray(bounds.action_low), np.asarray(bounds.action_high)
    base = initial_state_for(domain)
    episodes = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        start = tuple(float(v) for v in rng.uniform(0.15, 0.85, size=2))
        actions = rng.uniform(low, high, size=(length, 3))
        clip, _ = rollout(
            base.evolve(gripper_pos=start),
            actions_from_array(actions),
            domain,
            size,
        )
        episodes.append((clip.frames, actions))
    return InteractionDataset(episodes=episodes, domain=domain)


def save_dataset(dataset: InteractionDataset, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    paths = []
    for i, (frames, actions) in enumerate(dataset.episodes):
        rel = f"episodes/{i:05d}.dvdc"
        path = write_clip(VideoClip(frames=frames, domain=dataset.domain.embodiment), out_dir / rel)
        write_actions(path, f"{i:05d}", actions)
        paths.append(rel)
    index = {
        "domain": dataset.domain.model_dump(mode="json"),
        "episodes": paths,
        "provenance": dataset.provenance,
    }
    try:
        (out_dir / DATASET_FILE).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {out_dir / DATASET_FILE}: {e}") from e
    return out_dir


def load_dataset(data_dir: Path) -> InteractionDataset:
    data_dir = Path(data_dir)
    try:
        index = json.loads((data_dir / DATASET_FILE).read_text())
    except FileNotFoundError as e:
        raise MissingPrerequisiteError("train-dynamics", stage="load-interactions") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed interaction index in {data_dir}: {e}") from e
    episodes = []
    for rel in index["episodes"]:
        clip = read_clip(data_dir / rel)
        episodes.append((clip.frames, read_actions(data_dir / rel, expected=clip.n_frames - 1)))
    return InteractionDataset(
        episodes=episodes,
        domain=DomainSpec.model_validate(index["domain"]),
        provenance=index.get("provenance", {}),
    )


def _network_specs(config: DynConfig, size: int) -> Dict[str, NetworkSpec]:
    ctx, latent = config.context_frames, config.latent_dim
    w0, w1 = config.widths
    reduced = size // 4
    encoder = NetworkSpec(
        name="dyn_encoder",
        input_shape=(3 * ctx, 1, size, size),
        layers=[
            Conv3dSpec(kernel=(1, 3, 3), stride=(1, 2, 2), out_channels=w0),
            ReluSpec(),
            Conv3dSpec(kernel=(1, 3, 3), stride=(1, 2, 2), out_channels=w1),
            ReluSpec(),
            FlattenSpec(),
            FullyConnectedSpec(out_dim=latent),
        ],
        output_dim=latent,
    )
    transition = NetworkSpec(
        name="dyn_transition",
        input_shape=(latent + 3,),
        layers=[
            FullyConnectedSpec(out_dim=config.transition_hidden),
            ReluSpec(),
            FullyConnectedSpec(out_dim=latent, zero_init=True),
        ],
        output_dim=latent,
    )
    decoder = NetworkSpec(
        name="dyn_decoder",
        input_shape=(latent,),
        layers=[
            FullyConnectedSpec(out_dim=w1 * reduced * reduced),
            ReluSpec(),
            ReshapeSpec(shape=(w1, 1, reduced, reduced)),
            ConvTranspose3dSpec(out_channels=w0),
            ReluSpec(),
            ConvTranspose3dSpec(out_channels=3, zero_init=True),
        ],
        output_dim=3 * size * size,
    )
    return {"encoder": encoder, "transition": transition, "decoder": decoder}


def pad_context(history: Sequence[np.ndarray], context_frames: int) -> np.ndarray:
    """Last `context_frames` frames, front-padded by repeating the first frame."""
    frames = list(history)[-context_frames:]
    if not frames:
        raise ShapeError("prediction needs at least one context frame")
    frames = [frames[0]] * (context_frames - len(frames)) + frames
    return np.stack(frames)


class Predictor:
    def __init__(self, config: DynConfig, size: int, seed: int = 0, networks: Optional[Dict[str, Network]] = None):
        self.config = config
        self.size = size
        if networks is None:
            specs = _network_specs(config, size)
            networks = {name: Network(spec, seed=seed + i) for i, (name, spec) in enumerate(specs.items())}
        self.networks = networks

    @property
    def encoder(self) -> Network:
        return self.networks["encoder"]

    @property
    def transition(self) -> Network:
        return self.networks["transition"]

    @property
    def decoder(self) -> Network:
        return self.networks["decoder"]

    def _context_input(self, context: np.ndarray) -> np.ndarray:
        # (B, ctx, H, W, 3) -> (B, 3*ctx, 1, H, W)
        b, ctx, h, w, _ = context.shape
        stacked = np.transpose(context, (0, 1, 4, 2, 3)).reshape(b, 3 * ctx, h, w)
        return stacked[:, :, None].astype(np.float64)

    @staticmethod
    def _anchor_logit(context: np.ndarray) -> np.ndarray:
        last = np.clip(context[:, -1].astype(np.float64), LOGIT_EPS, 1.0 - LOGIT_EPS)
        logit = np.log(last) - np.log1p(-last)
        return np.transpose(logit, (0, 3, 1, 2))[:, :, None]

    @staticmethod
    def _to_frames(decoded: np.ndarray) -> np.ndarray:
        return np.transpose(decoded[:, :, 0], (0, 2, 3, 1))

    def _unroll(self, context: np.ndarray, actions: np.ndarray, mode: str = TRAIN):
        z, enc_cache = self.encoder.forward(self._context_input(context), mode)
        anchor = self._anchor_logit(context)
        steps = []
        for k in range(actions.shape[1]):
            dz, t_cache = self.transition.forward(np.concatenate([z, actions[:, k]], axis=1), mode)
            z = z + dz
            logits, d_cache = self.decoder.forward(z, mode)
            pred = expit(logits + anchor)
            steps.append((t_cache, d_cache, pred))
        return enc_cache, steps

    def predict_batch(self, context: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """(B, ctx, H, W, 3) context and (B, n, 3) actions -> (B, n, H, W, 3) frames."""
        context = np.asarray(context)
        actions = np.asarray(actions, dtype=np.float64)
        b, n = actions.shape[0], actions.shape[1]
        if context.shape[1] != self.config.context_frames:
            raise ShapeError(
                f"expected {self.config.context_frames} context frames, got {context.shape[1]}", layer_index=0
            )
        if n > self.config.rollout_limit:
            raise ShapeError(f"{n} actions exceed the rollout limit {self.config.rollout_limit}")
        if n == 0:
            return np.zeros((b, 0, self.size, self.size, 3))
        _, steps = self._unroll(context, actions, EVAL)
        return np.stack([self._to_frames(pred) for _, _, pred in steps], axis=1)

    def predict(self, context: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 3)
        return self.predict_batch(np.asarray(context)[None], actions[None])[0]

    def loss_and_grads(
        self, context: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> Tuple[float, Dict[str, Dict[str, np.ndarray]]]:
        """Mean squared error over all predicted pixels with gradients through time."""
        enc_cache, steps = self._unroll(context, actions)
        preds = np.stack([self._to_frames(pred) for _, _, pred in steps], axis=1)
        loss, grad_frames = mse(preds, targets)
        grads: Dict[str, Dict[str, np.ndarray]] = {name: {} for name in self.networks}
        latent = self.config.latent_dim
        carry = np.zeros((context.shape[0], latent))
        for k in range(len(steps) - 1, -1, -1):
            t_cache, d_cache, pred = steps[k]
            g_pred = np.transpose(grad_frames[:, k], (0, 3, 1, 2))[:, :, None]
            g_dec, g_z = self.decoder.backward(d_cache, g_pred * pred * (1.0 - pred))
            g_z = g_z + carry
            g_trans, g_in = self.transition.backward(t_cache, g_z)
            carry = g_z + g_in[:, :latent]
            _accumulate(grads["decoder"], g_dec)
            _accumulate(grads["transition"], g_trans)
        g_enc, _ = self.encoder.backward(enc_cache, carry)
        _accumulate(grads["encoder"], g_enc)
        return loss, grads


def _accumulate(total: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, value in grads.items():
        total[name] = total[name] + value if name in total else value.copy()


def _windows(
    dataset: InteractionDataset, indices: Sequence[int], config: DynConfig, rng: np.random.Generator, count: int
):
    ctx, k = config.context_frames, config.predict_frames
    contexts, actions, targets = [], [], []
    for _ in range(count):
        frames, acts = dataset.episodes[indices[int(rng.integers(len(indices)))]]
        t = int(rng.integers(0, len(frames) - ctx - k + 1))
        contexts.append(frames[t : t + ctx])
        actions.append(acts[t + ctx - 1 : t + ctx - 1 + k])
        targets.append(frames[t + ctx : t + ctx + k])
    return np.stack(contexts), np.stack(actions), np.stack(targets)


def holdout_windows(dataset: InteractionDataset, indices: Sequence[int], config: DynConfig):
    """Non-overlapping windows tiling every held-out episode."""
    ctx, k = config.context_frames, config.predict_frames
    contexts, actions, targets = [], [], []
    for index in indices:
        frames, acts = dataset.episodes[index]
        for t in range(0, len(frames) - ctx - k + 1, ctx + k):
            contexts.append(frames[t : t + ctx])
            actions.append(acts[t + ctx - 1 : t + ctx - 1 + k])
            targets.append(frames[t + ctx : t + ctx + k])
    return np.stack(contexts), np.stack(actions), np.stack(targets)


def copy_last_frame_mse(contexts: np.ndarray, targets: np.ndarray) -> float:
    copied = np.broadcast_to(contexts[:, -1:], targets.shape)
    return float(np.mean((copied.astype(np.float64) - targets) ** 2))


@dataclass
class PredictorResult:
    predictor: Predictor
    curve: List[Dict[str, float]] = field(default_factory=list)
    holdout_mse: float = 0.0
    copy_mse: float = 0.0


def train_predictor(
    dataset: InteractionDataset,
    config: DynConfig,
    seed: int,
    logger: Optional[StructuredLogger] = None,
) -> PredictorResult:
    logger = logger or JsonStructuredLogger("dvd.dynamics")
    n = len(dataset)
    if n <= config.holdout_episodes:
        raise ConfigError(f"{n} episodes leave nothing to train on after {config.holdout_episodes} held out")
    shortest = min(len(frames) for frames, _ in dataset.episodes)
    if shortest < config.context_frames + config.predict_frames + 1:
        raise ConfigError("episodes are shorter than context_frames + predict_frames + 1")
    train_idx = list(range(n - config.holdout_episodes))
    hold_idx = list(range(n - config.holdout_episodes, n))
    h_ctx, h_act, h_tgt = holdout_windows(dataset, hold_idx, config)
    copy_mse = copy_last_frame_mse(h_ctx, h_tgt)

    size = dataset.episodes[0][0].shape[1]
    predictor = Predictor(config, size, seed=seed)
    optimizers = {
        name: OptimizerState(
            learning_rate=config.optimizer.learning_rate,
            momentum=config.optimizer.momentum,
            weight_decay=config.optimizer.weight_decay,
        )
        for name in predictor.networks
    }
    start = time.perf_counter()
    curve = []
    step = 0
    holdout_mse = copy_mse
    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.steps_per_epoch):
            rng = np.random.default_rng([seed, step])
            contexts, actions, targets = _windows(dataset, train_idx, config, rng, config.batch_size)
            loss, grads = predictor.loss_and_grads(contexts, actions, targets)
            for name, network in predictor.networks.items():
                apply_step(network, grads[name], optimizers[name])
            losses.append(loss)
            step += 1
        holdout_mse = float(np.mean((predictor.predict_batch(h_ctx, h_act) - h_tgt) ** 2))
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "holdout_mse": holdout_mse, "copy_mse": copy_mse}
        curve.append(entry)
        log_epoch("train-dynamics", epoch, train_loss=entry["train_loss"], holdout_mse=holdout_mse)
    log_stage("train-dynamics", (time.perf_counter() - start) * 1000, holdout_mse=holdout_mse, copy_mse=copy_mse)
    logger.info("predictor trained", episodes=n, copy_mse=copy_mse, holdout_mse=holdout_mse)
    return PredictorResult(predictor, curve, holdout_mse, copy_mse)


def save_predictor(out_dir: Path, predictor: Predictor, provenance: Dict[str, Any]) -> Path:
    meta = {"provenance": provenance, "config": predictor.config.model_dump(mode="json"), "size": predictor.size}
    for name, filename in NETWORK_FILES.items():
        save_network(Path(out_dir) / filename, predictor.networks[name], meta)
    return Path(out_dir)


def load_predictor(model_dir: Path) -> Predictor:
    networks = {}
    meta: Dict[str, Any] = {}
    for name, filename in NETWORK_FILES.items():
        networks[name], meta = load_network(Path(model_dir) / filename, "train-dynamics")
    return Predictor(DynConfig.model_validate(meta["config"]), int(meta["size"]), networks=networks)


def _rollout_to_horizon(
    state: WorldState, actions: np.ndarray, domain: DomainSpec, size: Tuple[int, int]
) -> Tuple[np.ndarray, Tuple[WorldState, ...]]:
    """Roll out the actions that fit before HORIZON; the world then holds still."""
    fit = actions[: max(HORIZON - state.time, 0)]
    clip, visited = rollout(state, actions_from_array(fit), domain, size)
    idle = len(actions) - len(fit)
    frames = np.concatenate([clip.frames[1:], np.repeat(clip.frames[-1:], idle, axis=0)])
    return frames, visited + (visited[-1],) * idle


def oracle_predict(
    state: WorldState, actions: np.ndarray, domain: DomainSpec, size: Tuple[int, int] = (32, 32)
) -> np.ndarray:
    """Frames after each action, rendered by the simulator itself."""
    frames, _ = _rollout_to_horizon(state, np.asarray(actions).reshape(-1, 3), domain, size)
    return frames


class LearnedDynamics:
    mode = DynamicsMode.LEARNED.value

    def __init__(self, predictor: Predictor):
        self.predictor = predictor

    def predict_candidates(self, history: Sequence[np.ndarray], state: Any, action_seqs: np.ndarray) -> Predictions:
        context = pad_context(history, self.predictor.config.context_frames)
        chunks = []
        for i in range(0, len(action_seqs), PREDICT_CHUNK):
            part = action_seqs[i : i + PREDICT_CHUNK]
            contexts = np.broadcast_to(context, (len(part), *context.shape))
            chunks.append(self.predictor.predict_batch(contexts, part))
        return Predictions(frames=np.concatenate(chunks, axis=0))


class OracleDynamics:
    """Simulator rollouts from the true current state."""

    mode = DynamicsMode.ORACLE.value

    def __init__(self, domain: DomainSpec, size: Tuple[int, int] = (32, 32)):
        self.domain = domain
        self.size = size

    def predict_candidates(
        self, history: Sequence[np.ndarray], state: WorldState, action_seqs: np.ndarray
    ) -> Predictions:
        frames, states = [], []
        for seq in action_seqs:
            seq_frames, visited = _rollout_to_horizon(state, seq, self.domain, self.size)
            frames.append(seq_frames)
            states.append(visited)
        return Predictions(frames=np.stack(frames), states=states)
