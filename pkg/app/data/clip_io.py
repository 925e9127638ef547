"""Binary clip files.

Header (little-endian): magic ``DVDC``, u16 version, u32 n_frames, u16 height,
u16 width, u8 channels (3), u8 dtype (0 = unsigned 8-bit); then frame-major,
row-major pixel bytes.
"""

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from app.core.exceptions import ArtifactIOError, FormatError
from app.models.world import Domain, VideoClip

MAGIC = b"DVDC"
VERSION = 1
CHANNELS = 3
DTYPE_U8 = 0
_HEADER = struct.Struct("<4sHIHHBB")
_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF

PathLike = Union[str, Path]


def quantize(frames: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(frames, dtype=np.float64) * 255.0).astype(np.uint8)


def dequantize(pixels: np.ndarray) -> np.ndarray:
    return (pixels.astype(np.float64) / 255.0).astype(np.float32)


def encode_clip(clip: VideoClip) -> bytes:
    n, h, w, c = clip.frames.shape
    if n > _U32_MAX or h > _U16_MAX or w > _U16_MAX:
        raise FormatError(f"clip dimensions {clip.frames.shape} overflow the header fields")
    header = _HEADER.pack(MAGIC, VERSION, n, h, w, c, DTYPE_U8)
    return header + np.ascontiguousarray(quantize(clip.frames)).tobytes()


def decode_clip(
    data: bytes,
    task_id: Optional[int] = None,
    domain: Domain = Domain.ROBOT,
    env_tier: int = 0,
) -> VideoClip:
    if len(data) < _HEADER.size:
        raise FormatError("clip file shorter than its header")
    magic, version, n, h, w, c, dtype = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad clip magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported clip version {version}")
    if c != CHANNELS or dtype != DTYPE_U8:
        raise FormatError(f"unsupported pixel layout (channels={c}, dtype={dtype})")
    if n < 1 or h < 1 or w < 1:
        raise FormatError(f"empty clip dimensions ({n}, {h}, {w})")
    expected = n * h * w * c
    payload = len(data) - _HEADER.size
    if payload != expected:
        raise FormatError(f"clip payload has {payload} bytes, header promises {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(n, h, w, c)
    return VideoClip(frames=dequantize(pixels), task_id=task_id, domain=domain, env_tier=env_tier)


def write_clip(clip: VideoClip, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_clip(clip))
    except OSError as e:
        raise ArtifactIOError(f"cannot write clip {path}: {e}") from e
    return path


def read_clip(
    path: PathLike,
    task_id: Optional[int] = None,
    domain: Domain = Domain.ROBOT,
    env_tier: int = 0,
) -> VideoClip:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read clip {path}: {e}") from e
    try:
        return decode_clip(data, task_id, domain, env_tier)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
