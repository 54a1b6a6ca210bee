"""Synthetic clips: a static two-region background with textured squares sliding over it."""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..metrics import MaskSequence
from ..tensor import Rng
from .config import SynthClipSpec

_PALETTE = np.array([
    [0.15, 0.35, 0.80],
    [0.25, 0.65, 0.20],
    [0.90, 0.20, 0.15],
    [0.95, 0.80, 0.10],
    [0.60, 0.25, 0.75],
    [0.10, 0.80, 0.80],
    [0.55, 0.35, 0.15],
    [0.85, 0.85, 0.85],
])


def class_color(k: int) -> np.ndarray:
    if k < len(_PALETTE):
        return _PALETTE[k]
    return Rng(1000 + k).uniform(3)


def _start_range(extent: int, size: int, v: int, steps: int) -> tuple[int, int]:
    lo = max(0, -v * steps)
    hi = min(extent - size, extent - size - v * steps)
    return lo, hi


def gen_clip(spec: SynthClipSpec) -> tuple[np.ndarray, MaskSequence]:
    """Returns (frames (C, H, W, 3) float32, GT masks).

    Classes 0 and 1 split the background along a random row; the remaining
    classes label the squares. Textures are drawn once per clip and move
    with their surface, so a zero velocity gives identical frames.
    """
    h, w, size = spec.height, spec.width, spec.object_size
    if size > h or size > w or size < 1:
        raise ContractError(f"object size {size} does not fit a {h}x{w} frame")
    vx, vy = spec.velocity
    steps = spec.frames - 1
    rng = Rng(spec.seed)
    n_bg = 2 if spec.n_classes >= 3 else 1

    bg = np.zeros((h, w), dtype=np.int64)
    if n_bg == 2:
        bg[rng.integers(h // 4, 3 * h // 4 + 1):] = 1
    bg_tex = rng.normal((h, w, 3), spec.noise)

    objects = []
    for i in range(spec.n_objects):
        xs = _start_range(w, size, vx, steps)
        ys = _start_range(h, size, vy, steps)
        if xs[0] > xs[1] or ys[0] > ys[1]:
            raise ContractError("objects cannot stay inside the frame at this velocity")
        x0 = int(rng.integers(xs[0], xs[1] + 1))
        y0 = int(rng.integers(ys[0], ys[1] + 1))
        cls = n_bg + i % (spec.n_classes - n_bg)
        objects.append((y0, x0, cls, rng.normal((size, size, 3), spec.noise)))

    frames = np.empty((spec.frames, h, w, 3), dtype=np.float32)
    masks = np.empty((spec.frames, h, w), dtype=np.uint8)
    colors = np.stack([class_color(k) for k in range(spec.n_classes)])
    for t in range(spec.frames):
        label = bg.copy()
        img = colors[bg] + bg_tex
        for y0, x0, cls, tex in objects:
            y, x = y0 + vy * t, x0 + vx * t
            label[y:y + size, x:x + size] = cls
            img[y:y + size, x:x + size] = colors[cls] + tex
        frames[t] = img
        masks[t] = label
    return frames, MaskSequence(masks, spec.n_classes)
