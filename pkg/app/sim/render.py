"""Rasterizer for world states.

Pixels are mapped back through the inverse view transform into table
coordinates, where every shape is evaluated as a soft (one-pixel anti-aliased)
mask. Shapes are painted back to front; the embodiment sprite is painted last
and never touches pixels outside its bounding box. Output is quantized to the
8-bit grid so frames survive clip files unchanged.
"""

import math
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

from app.models.world import Domain, DomainSpec, ViewTransform, WorldState

SPRITE_HALF_EXTENT = 0.07
TEXTURE_AMPLITUDE = 0.06
FAUCET_SWING = 0.9

_PALETTE_KEYS = (
    "background",
    "table",
    "drawer",
    "handle",
    "faucet",
    "cup",
    "machine",
    "distractor",
    "robot",
    "hand",
)

_PALETTE_ROWS = (
    # canonical
    ((0.35, 0.35, 0.38), (0.78, 0.72, 0.60), (0.55, 0.35, 0.20), (0.90, 0.85, 0.20),
     (0.60, 0.65, 0.75), (0.85, 0.20, 0.20), (0.15, 0.15, 0.18), (0.30, 0.60, 0.30),
     (0.25, 0.30, 0.45), (0.92, 0.72, 0.60)),
    ((0.20, 0.25, 0.30), (0.60, 0.75, 0.80), (0.30, 0.40, 0.60), (0.95, 0.60, 0.10),
     (0.80, 0.80, 0.80), (0.20, 0.60, 0.90), (0.40, 0.10, 0.10), (0.70, 0.70, 0.20),
     (0.20, 0.20, 0.20), (0.80, 0.55, 0.45)),
    ((0.50, 0.45, 0.40), (0.90, 0.90, 0.88), (0.20, 0.55, 0.35), (0.10, 0.10, 0.10),
     (0.45, 0.35, 0.60), (0.95, 0.75, 0.15), (0.25, 0.25, 0.55), (0.85, 0.40, 0.60),
     (0.45, 0.45, 0.50), (0.60, 0.42, 0.30)),
    ((0.10, 0.10, 0.12), (0.45, 0.40, 0.35), (0.80, 0.65, 0.45), (0.20, 0.90, 0.90),
     (0.30, 0.30, 0.30), (0.95, 0.95, 0.95), (0.60, 0.20, 0.50), (0.15, 0.35, 0.75),
     (0.70, 0.30, 0.20), (0.98, 0.80, 0.70)),
    ((0.60, 0.65, 0.55), (0.35, 0.50, 0.35), (0.75, 0.75, 0.55), (0.70, 0.10, 0.10),
     (0.90, 0.60, 0.30), (0.10, 0.20, 0.60), (0.95, 0.95, 0.90), (0.50, 0.25, 0.10),
     (0.10, 0.40, 0.40), (0.50, 0.33, 0.25)),
    ((0.75, 0.70, 0.80), (0.95, 0.85, 0.70), (0.40, 0.20, 0.40), (0.25, 0.60, 0.20),
     (0.20, 0.45, 0.45), (0.55, 0.10, 0.55), (0.35, 0.30, 0.20), (0.90, 0.55, 0.10),
     (0.55, 0.55, 0.65), (0.85, 0.62, 0.52)),
    ((0.30, 0.20, 0.15), (0.70, 0.55, 0.45), (0.95, 0.95, 0.95), (0.05, 0.30, 0.70),
     (0.85, 0.85, 0.30), (0.20, 0.70, 0.30), (0.10, 0.10, 0.30), (0.60, 0.60, 0.60),
     (0.35, 0.25, 0.50), (0.72, 0.50, 0.38)),
    ((0.85, 0.85, 0.85), (0.55, 0.55, 0.60), (0.90, 0.30, 0.10), (0.95, 0.95, 0.40),
     (0.10, 0.55, 0.80), (0.60, 0.40, 0.20), (0.30, 0.45, 0.15), (0.80, 0.20, 0.40),
     (0.15, 0.20, 0.25), (0.95, 0.78, 0.66)),
)

PALETTES: Tuple[Dict[str, np.ndarray], ...] = tuple(
    {key: np.array(rgb) for key, rgb in zip(_PALETTE_KEYS, row)} for row in _PALETTE_ROWS
)
CANONICAL_PALETTE = 0


@lru_cache(maxsize=64)
def table_coords(view: ViewTransform, size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Table coordinates (u, v) of every pixel centre under `view`."""
    height, width = size
    cols = (np.arange(width) + 0.5) / width
    rows = 1.0 - (np.arange(height) + 0.5) / height
    px, py = np.meshgrid(cols, rows)
    x = px - 0.5 - view.tx
    y = py - 0.5 - view.ty
    c, s = math.cos(view.rotation), math.sin(view.rotation)
    u = (c * x + s * y) / view.scale + 0.5
    v = (-s * x + c * y) / view.scale + 0.5
    u.flags.writeable = False
    v.flags.writeable = False
    return u, v


@lru_cache(maxsize=64)
def _texture(texture_seed: int, view: ViewTransform, size: Tuple[int, int]) -> np.ndarray:
    u, v = table_coords(view, size)
    grid = np.random.default_rng(texture_seed).uniform(-1.0, 1.0, size=(6, 6))
    field = ndimage.map_coordinates(grid, [v * 5.0, u * 5.0], order=1, mode="nearest")
    return TEXTURE_AMPLITUDE * field


class _Canvas:
    def __init__(self, view: ViewTransform, size: Tuple[int, int], background: np.ndarray):
        self.u, self.v = table_coords(view, size)
        self.pixel = 1.0 / (min(size) * view.scale)
        self.image = np.broadcast_to(background, (*size, 3)).copy()

    def _alpha(self, signed_distance: np.ndarray) -> np.ndarray:
        return np.clip(0.5 - signed_distance / self.pixel, 0.0, 1.0)

    def paint(self, alpha: np.ndarray, colour: np.ndarray) -> None:
        a = alpha[..., None]
        self.image = self.image * (1.0 - a) + colour * a

    def box(self, cx, cy, hx, hy) -> np.ndarray:
        sd = np.maximum(np.abs(self.u - cx) - hx, np.abs(self.v - cy) - hy)
        return self._alpha(sd)

    def disc(self, cx, cy, r) -> np.ndarray:
        return self._alpha(np.hypot(self.u - cx, self.v - cy) - r)

    def segment(self, p0, p1, width) -> np.ndarray:
        ax, ay = p0
        bx, by = p1
        dx, dy = bx - ax, by - ay
        t = np.clip(((self.u - ax) * dx + (self.v - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        d = np.hypot(self.u - (ax + t * dx), self.v - (ay + t * dy))
        return self._alpha(d - width / 2)


def _robot_sprite(canvas: _Canvas, gx: float, gy: float, closed: bool) -> np.ndarray:
    spread = 0.015 if closed else 0.03
    return np.maximum.reduce(
        [
            canvas.box(gx, gy + 0.035, 0.04, 0.012),
            canvas.box(gx - spread, gy, 0.01, 0.03),
            canvas.box(gx + spread, gy, 0.01, 0.03),
        ]
    )


def _hand_sprite(canvas: _Canvas, gx: float, gy: float, closed: bool) -> np.ndarray:
    tip = gy - (0.015 if closed else 0.035)
    parts = [canvas.disc(gx, gy + 0.02, 0.03)]
    for k in (-1, 0, 1):
        parts.append(canvas.segment((gx + 0.015 * k, gy + 0.01), (gx + 0.02 * k, tip), 0.012))
    parts.append(canvas.segment((gx + 0.02, gy + 0.025), (gx + 0.05, gy + 0.01), 0.012))
    return np.maximum.reduce(parts)


def render(state: WorldState, domain: DomainSpec, size: Tuple[int, int] = (32, 32)) -> np.ndarray:
    height, width = size
    if height < 16 or width < 16:
        raise ValueError(f"frame size must be at least 16x16, got {size}")
    palette = PALETTES[domain.palette_id % len(PALETTES)]
    canvas = _Canvas(domain.view, size, palette["background"])

    on_table = (canvas.u >= 0) & (canvas.u <= 1) & (canvas.v >= 0) & (canvas.v <= 1)
    table = np.broadcast_to(palette["table"], (*size, 3)).copy()
    if domain.texture_seed:
        table = table + _texture(domain.texture_seed, domain.view, size)[..., None]
    canvas.image = np.where(on_table[..., None], table, canvas.image)

    mx, my = state.machine_pos
    canvas.paint(canvas.box(mx, my, 0.045, 0.04), palette["machine"])
    canvas.paint(canvas.box(mx, my + 0.01, 0.02, 0.012), palette["handle"])

    dx, dy = state.drawer_pos
    canvas.paint(canvas.box(dx - 0.05, dy, 0.05, 0.055), palette["drawer"] * 0.6)
    front = dx + state.drawer_openness
    canvas.paint(canvas.box((dx - 0.06 + front) / 2, dy, (front - dx + 0.06) / 2, 0.04), palette["drawer"])
    hx, hy = state.drawer_handle
    canvas.paint(canvas.box(hx + 0.006, hy, 0.006, 0.03), palette["handle"])

    fx, fy = state.faucet_pos
    swing = state.faucet_angle / 0.05 * FAUCET_SWING
    spout_end = (fx + 0.09 * math.sin(swing), fy + 0.09 * math.cos(swing))
    canvas.paint(canvas.disc(fx, fy, 0.03), palette["faucet"])
    canvas.paint(canvas.segment((fx, fy), spout_end, 0.018), palette["faucet"] * 0.7)
    fhx, fhy = state.faucet_handle
    canvas.paint(canvas.disc(fhx, fhy, 0.015), palette["handle"])

    cx, cy = state.cup_pos
    canvas.paint(canvas.disc(cx, cy, 0.035), palette["cup"])
    canvas.paint(canvas.disc(cx, cy, 0.018), palette["cup"] * 0.5)

    for px, py in state.distractor_pos:
        canvas.paint(canvas.box(px, py, 0.025, 0.025), palette["distractor"])

    gx, gy = state.gripper_pos
    bbox = (np.abs(canvas.u - gx) <= SPRITE_HALF_EXTENT) & (np.abs(canvas.v - gy) <= SPRITE_HALF_EXTENT)
    if domain.embodiment == Domain.ROBOT:
        sprite, colour = _robot_sprite(canvas, gx, gy, state.grip_closed), palette["robot"]
    else:
        sprite, colour = _hand_sprite(canvas, gx, gy, state.grip_closed), palette["hand"]
    canvas.paint(np.where(bbox, sprite, 0.0), colour)

    image = np.clip(canvas.image, 0.0, 1.0)
    return (np.round(image * 255.0) / 255.0).astype(np.float32)
