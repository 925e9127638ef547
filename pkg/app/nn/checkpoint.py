"""Binary checkpoint files.

Layout: magic ``DVDW``, u16 version, 32-byte network spec digest, then named
tensors until end of file, each as (u16 name length, utf-8 name, u8 rank,
u32 dims, little-endian float32 values). Parameters live on the float32 grid
in memory, so a load reproduces them bit-exactly.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from app.core.exceptions import (
    ArtifactIOError,
    CompatibilityError,
    FormatError,
    MissingPrerequisiteError,
)
from app.models.network import NetworkSpec
from app.nn.network import Network
from app.nn.optim import OptimizerState

MAGIC = b"DVDW"
VERSION = 1
_HEADER = struct.Struct("<4sH32s")

PARAM_PREFIX = "param."
BUFFER_PREFIX = "buffer."
VELOCITY_PREFIX = "opt.velocity."
STEP_KEY = "meta.step"

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    version: int
    spec_digest: bytes
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def _with_prefix(self, prefix: str) -> Dict[str, np.ndarray]:
        return {k[len(prefix) :]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def parameters(self) -> Dict[str, np.ndarray]:
        return self._with_prefix(PARAM_PREFIX)

    def buffers(self) -> Dict[str, np.ndarray]:
        return self._with_prefix(BUFFER_PREFIX)

    def velocities(self) -> Dict[str, np.ndarray]:
        return self._with_prefix(VELOCITY_PREFIX)

    @property
    def step(self) -> Optional[int]:
        value = self.tensors.get(STEP_KEY)
        return None if value is None else int(value)


def _encode_tensor(name: str, value: np.ndarray) -> bytes:
    array = np.asarray(value, dtype="<f4")
    encoded = name.encode("utf-8")
    parts = [
        struct.pack("<H", len(encoded)),
        encoded,
        struct.pack("<B", array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        np.ascontiguousarray(array).tobytes(),
    ]
    return b"".join(parts)


def encode_checkpoint(
    network: Network,
    optimizer: Optional[OptimizerState] = None,
    step: Optional[int] = None,
) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, network.spec.digest())]
    for name, value in network.parameters().items():
        chunks.append(_encode_tensor(PARAM_PREFIX + name, value))
    for name, value in network.buffers().items():
        chunks.append(_encode_tensor(BUFFER_PREFIX + name, value))
    if optimizer is not None:
        for name, value in optimizer.velocity.items():
            chunks.append(_encode_tensor(VELOCITY_PREFIX + name, value))
    if step is not None:
        chunks.append(_encode_tensor(STEP_KEY, np.float32(step)))
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint shorter than its header")
    magic, version, digest = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    checkpoint = Checkpoint(version=version, spec_digest=digest)
    offset = _HEADER.size
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = offset + 4 * count
            if end > len(data):
                raise FormatError(f"checkpoint truncated inside tensor '{name}'")
            values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            checkpoint.tensors[name] = values.astype(np.float64).reshape(dims)
            offset = end
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"malformed checkpoint: {e}") from e
    return checkpoint


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def save_checkpoint(
    path: PathLike,
    network: Network,
    optimizer: Optional[OptimizerState] = None,
    step: Optional[int] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(network, optimizer, step))
        if meta is not None:
            sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    except OSError as e:
        raise ArtifactIOError(f"cannot write checkpoint {path}: {e}") from e
    return path


def read_checkpoint(path: PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data)


def load_checkpoint(
    path: PathLike,
    network: Network,
    optimizer: Optional[OptimizerState] = None,
) -> Checkpoint:
    """Restore `network` (and optionally optimizer velocities) in place."""
    checkpoint = read_checkpoint(path)
    if checkpoint.spec_digest != network.spec.digest():
        raise CompatibilityError(
            f"checkpoint {path} was written for a different network spec than '{network.spec.name}'"
        )
    params = checkpoint.parameters()
    expected = set(network.parameters())
    if set(params) != expected:
        raise FormatError(f"checkpoint {path} parameter names do not match the network")
    network.set_parameters(params)
    network.set_buffers(checkpoint.buffers())
    if optimizer is not None:
        optimizer.velocity = checkpoint.velocities()
    return checkpoint


def read_meta(path: PathLike) -> Dict[str, Any]:
    try:
        return json.loads(sidecar_path(path).read_text())
    except OSError as e:
        raise ArtifactIOError(f"cannot read checkpoint metadata for {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed checkpoint metadata for {path}: {e}") from e


def file_digest(path: PathLike) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e


def save_network(path: PathLike, network: Network, meta: Dict[str, Any]) -> Path:
    """Checkpoint plus a sidecar carrying the spec needed to rebuild the network."""
    return save_checkpoint(
        path, network, meta={**meta, "network_spec": network.spec.model_dump(mode="json")}
    )


def load_network(path: PathLike, producer: str) -> Tuple[Network, Dict[str, Any]]:
    """Rebuild and restore a frozen network; a missing file names the stage that writes it."""
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(producer, stage="load")
    meta = read_meta(path)
    network = Network(NetworkSpec.model_validate(meta["network_spec"]))
    load_checkpoint(path, network)
    network.freeze()
    return network, meta
