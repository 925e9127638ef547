"""Clip windowing, temporal resampling and spatial augmentation."""

import math
from typing import Tuple

import numpy as np
from scipy import ndimage

from app.models.data import AugmentSpec, WindowSpec
from app.models.world import VideoClip


def sample_clip_window(
    clip: VideoClip,
    rng: np.random.Generator,
    min_len: int = 20,
    max_len: int = 40,
) -> VideoClip:
    """Random contiguous window of L ~ U[min_len, max_len] frames.

    Clips shorter than L are returned whole with the last frame repeated up
    to L.
    """
    if min_len > max_len:
        raise ValueError("min_len must not exceed max_len")
    length = int(rng.integers(min_len, max_len + 1))
    n = clip.n_frames
    if n >= length:
        start = int(rng.integers(0, n - length + 1))
        return clip.with_frames(clip.frames[start : start + length])
    pad = np.repeat(clip.frames[-1:], length - n, axis=0)
    return clip.with_frames(np.concatenate([clip.frames, pad], axis=0))


def window_with(clip: VideoClip, spec: WindowSpec, rng: np.random.Generator) -> VideoClip:
    return sample_clip_window(clip, rng, spec.min_len, spec.max_len)


def resample_indices(n: int, frames: int) -> np.ndarray:
    if frames < 1:
        raise ValueError("F must be at least 1")
    if frames == 1 or n == 1:
        return np.zeros(frames, dtype=np.int64)
    i = np.arange(frames, dtype=np.float64)
    # Python round() is half-to-even; floor(x + 0.5) keeps ties going up.
    return np.floor(i * (n - 1) / (frames - 1) + 0.5).astype(np.int64)


def temporal_resample(clip: VideoClip, frames: int) -> VideoClip:
    return clip.with_frames(clip.frames[resample_indices(clip.n_frames, frames)])


def _crop_rotate(
    frames: np.ndarray, angle_rad: float, crop: int, origin: Tuple[int, int]
) -> np.ndarray:
    """Sample a rotated crop of side `crop` at `origin`, resized back to full size."""
    _, h, w, _ = frames.shape
    sy, sx = crop / h, crop / w
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos, sin = math.cos(angle_rad), math.sin(angle_rad)
    # output (i, j) -> crop point p = (origin + (i*sy, j*sx)) -> rotated about the centre
    a = np.array([[cos * sy, -sin * sx], [sin * sy, cos * sx]])
    p0 = np.array([origin[0] - cy, origin[1] - cx])
    offset2d = np.array([[cos, -sin], [sin, cos]]) @ p0 + np.array([cy, cx])
    matrix = np.eye(4)
    matrix[1:3, 1:3] = a
    offset = np.array([0.0, offset2d[0], offset2d[1], 0.0])
    out = ndimage.affine_transform(
        frames.astype(np.float64), matrix, offset=offset, order=1, mode="nearest"
    )
    return np.clip(out, 0.0, 1.0)


def augment(clip: VideoClip, spec: AugmentSpec, rng: np.random.Generator) -> VideoClip:
    """One rotation and one crop window per clip, shared by every frame."""
    if not spec.enabled:
        return clip
    _, h, w, _ = clip.frames.shape
    angle = math.radians(float(rng.uniform(-spec.rotation_range_deg, spec.rotation_range_deg)))
    crop = max(1, int(math.floor(spec.crop_frac * min(h, w))))
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    return clip.with_frames(_crop_rotate(clip.frames, angle, crop, (oy, ox)))


def center_crop(clip: VideoClip, crop_frac: float) -> VideoClip:
    """Deterministic evaluation-time counterpart of `augment`."""
    _, h, w, _ = clip.frames.shape
    crop = max(1, int(math.floor(crop_frac * min(h, w))))
    if crop == h == w:
        return clip
    origin = ((h - crop) // 2, (w - crop) // 2)
    return clip.with_frames(_crop_rotate(clip.frames, 0.0, crop, origin))


def to_network_input(clips) -> np.ndarray:
    """Stack clips of F frames into the encoder layout (N, 3, F, H, W)."""
    frames = np.stack([np.asarray(c.frames, dtype=np.float64) for c in clips])
    return np.transpose(frames, (0, 4, 1, 2, 3))
