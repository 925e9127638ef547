"""Demo-conditioned behavioral cloning baseline.

The policy maps concat(frozen demo embedding, frozen state features) to an
action. Demo embeddings come from the frozen DVD video encoder; state
features are the current frame block-averaged to a coarse grid.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import InsufficientDataError
from app.core.logging import JsonStructuredLogger, log_epoch, log_stage
from app.core.protocols import StructuredLogger
from app.data.manifest import load_clip, read_actions
from app.models.data import Manifest
from app.models.network import FullyConnectedSpec, NetworkSpec, ReluSpec
from app.models.planner import EpisodeResult, PlannerConfig
from app.models.training import BCConfig
from app.models.world import DomainSpec, TaskSpec, VideoClip, WorldState
from app.nn.checkpoint import load_network, save_network
from app.nn.losses import mse
from app.nn.network import EVAL, TRAIN, Network
from app.nn.optim import apply_step
from app.services.dvd_service import DVDModel, make_optimizer
from app.sim.render import render
from app.sim.tasks import eval_success
from app.sim.world import HORIZON, actions_from_array, initial_state_for, step

POOL_GRID = 8
POLICY_FILE = "bc_policy.dvdw"


def state_features(frame: np.ndarray, grid: int = POOL_GRID) -> np.ndarray:
    """Frame averaged over grid x grid blocks, flattened."""
    h, w, c = frame.shape
    bh, bw = h // grid, w // grid
    cropped = np.asarray(frame, dtype=np.float64)[: bh * grid, : bw * grid]
    blocks = cropped.reshape(grid, bh, grid, bw, c)
    return blocks.mean(axis=(1, 3)).reshape(-1)


def policy_spec(embedding_dim: int, hidden: Sequence[int], grid: int = POOL_GRID) -> NetworkSpec:
    layers: List[Any] = []
    for width in hidden:
        layers += [FullyConnectedSpec(out_dim=width), ReluSpec()]
    layers.append(FullyConnectedSpec(out_dim=3, zero_init=True))
    return NetworkSpec(
        name="bc_policy", input_shape=(embedding_dim + grid * grid * 3,), layers=layers, output_dim=3
    )


@dataclass
class BCPolicy:
    model: DVDModel
    head: Network
    low: np.ndarray
    high: np.ndarray

    def act_batch(self, demo_embedding: np.ndarray, frames: Sequence[np.ndarray]) -> np.ndarray:
        features = np.stack([state_features(f) for f in frames])
        demo = np.broadcast_to(demo_embedding, (features.shape[0], demo_embedding.shape[-1]))
        raw = self.head.forward(np.concatenate([demo, features], axis=1), EVAL)[0]
        return np.clip(raw, self.low, self.high)

    def act(self, demo_embedding: np.ndarray, frame: np.ndarray) -> np.ndarray:
        return self.act_batch(demo_embedding, [frame])[0]


@dataclass
class BCTrainResult:
    policy: BCPolicy
    curve: List[Dict[str, float]] = field(default_factory=list)
    initial_loss: float = 0.0


@dataclass
class RobotDemo:
    task_id: int
    frames: np.ndarray
    actions: np.ndarray


def load_robot_demos(manifest: Manifest, root: Path) -> List[RobotDemo]:
    """Robot clips with their action sidecars; a missing sidecar is a data error."""
    demos = []
    for record in manifest.records:
        clip = load_clip(root, record)
        actions = read_actions(Path(root) / record.clip_path, expected=clip.n_frames - 1)
        demos.append(RobotDemo(record.task_id, clip.frames, actions))
    return demos


def train_bc(
    robot_demos: Sequence[RobotDemo],
    human_clips: Sequence[VideoClip],
    model: DVDModel,
    config: BCConfig,
    seed: int,
    bounds: Optional[PlannerConfig] = None,
    logger: Optional[StructuredLogger] = None,
) -> BCTrainResult:
    """Regress executed actions; the conditioning demo is a robot demo w.p. robot_demo_prob."""
    logger = logger or JsonStructuredLogger("dvd.bc")
    if not robot_demos:
        raise InsufficientDataError("behavioral cloning needs at least one robot demo")
    bounds = bounds or PlannerConfig()

    robot_clips = [VideoClip(frames=d.frames, task_id=d.task_id) for d in robot_demos]
    robot_embeddings = model.encode_batch(robot_clips)
    human_by_task: Dict[int, List[int]] = {}
    for i, clip in enumerate(human_clips):
        human_by_task.setdefault(clip.task_id, []).append(i)
    human_embeddings = model.encode_batch(list(human_clips)) if human_clips else np.zeros((0, model.embedding_dim))
    robot_by_task: Dict[int, List[int]] = {}
    for i, demo in enumerate(robot_demos):
        robot_by_task.setdefault(demo.task_id, []).append(i)
    features = [np.stack([state_features(f) for f in d.frames[:-1]]) for d in robot_demos]

    head = Network(policy_spec(model.embedding_dim, config.hidden), seed=seed)
    opt = make_optimizer(config.optimizer)

    def batch(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        inputs, targets = [], []
        for _ in range(config.batch_size):
            i = int(rng.integers(len(robot_demos)))
            demo = robot_demos[i]
            t = int(rng.integers(len(demo.actions)))
            humans = human_by_task.get(demo.task_id, [])
            if humans and rng.random() >= config.robot_demo_prob:
                conditioning = human_embeddings[humans[int(rng.integers(len(humans)))]]
            else:
                peers = robot_by_task[demo.task_id]
                conditioning = robot_embeddings[peers[int(rng.integers(len(peers)))]]
            inputs.append(np.concatenate([conditioning, features[i][t]]))
            targets.append(demo.actions[t])
        return np.stack(inputs), np.stack(targets)

    start = time.perf_counter()
    check_inputs, check_targets = batch(np.random.default_rng([seed, 0, 1]))
    initial_loss, _ = mse(head.forward(check_inputs, EVAL)[0], check_targets)
    curve = []
    step_index = 0
    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.steps_per_epoch):
            inputs, targets = batch(np.random.default_rng([seed, step_index]))
            out, cache = head.forward(inputs, TRAIN)
            loss, grad = mse(out, targets)
            grads, _ = head.backward(cache, grad)
            apply_step(head, grads, opt)
            losses.append(loss)
            step_index += 1
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        curve.append(entry)
        log_epoch("train-bc", epoch, train_loss=entry["train_loss"])
    head.freeze()
    log_stage("train-bc", (time.perf_counter() - start) * 1000, train_loss=curve[-1]["train_loss"] if curve else None)
    logger.info("bc policy trained", demos=len(robot_demos), human_clips=len(human_clips))
    policy = BCPolicy(
        model=model,
        head=head,
        low=np.asarray(bounds.action_low, dtype=np.float64),
        high=np.asarray(bounds.action_high, dtype=np.float64),
    )
    return BCTrainResult(policy=policy, curve=curve, initial_loss=float(initial_loss))


def run_bc_episode(
    policy: BCPolicy,
    domain: DomainSpec,
    task: TaskSpec,
    demo: VideoClip,
    size: Tuple[int, int] = (32, 32),
    horizon: int = HORIZON,
    init: Optional[WorldState] = None,
) -> EpisodeResult:
    """Closed-loop policy execution up to `horizon`, never past HORIZON."""
    horizon = min(horizon, HORIZON)
    demo_embedding = policy.model.encode(demo)
    state = init or initial_state_for(domain)
    frames = [render(state, domain, size)]
    states = [state]
    while state.time < horizon:
        action = actions_from_array(policy.act(demo_embedding, frames[-1]))[0]
        state = step(state, action)
        states.append(state)
        frames.append(render(state, domain, size))
    clip = VideoClip(frames=np.stack(frames), domain=domain.embodiment, task_id=task.task_id)
    return EpisodeResult(states=tuple(states), success=eval_success(task, states), clip=clip)


def save_policy(out_dir: Path, policy: BCPolicy, provenance: Dict[str, Any]) -> Path:
    meta = {"provenance": provenance, "low": policy.low.tolist(), "high": policy.high.tolist()}
    return save_network(Path(out_dir) / POLICY_FILE, policy.head, meta)


def load_policy(out_dir: Path, model: DVDModel) -> BCPolicy:
    head, meta = load_network(Path(out_dir) / POLICY_FILE, "bench")
    return BCPolicy(model=model, head=head, low=np.asarray(meta["low"]), high=np.asarray(meta["high"]))
