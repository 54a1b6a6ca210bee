"""Toy encoder + context pooling + mining stack, wired end to end."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import cfm
from ..cffa import assemble_context, init_pool_params
from ..errors import DimensionError
from ..tensor import (Parameter, Rng, Tensor, add, crop, gelu, linear, reshape,
                      space_to_depth, take, upsample_bilinear)
from .config import RunConfig


def _mix_indices(h: int, w: int) -> np.ndarray:
    """(h*w, 9) indices of each cell's 3x3 neighbourhood, clamped at the border."""
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    idx = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            r = np.clip(rows + dy, 0, h - 1)
            c = np.clip(cols + dx, 0, w - 1)
            idx.append((r * w + c).reshape(-1))
    return np.stack(idx, axis=1)


def toy_encode(image, embed_w, embed_b, mix_w, mix_b, patch: int = 4) -> Tensor:
    """(H, W, 3) image -> (H/patch, W/patch, c): patch embedding then a residual 3x3 mixing layer."""
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=embed_w.dtype))
    x = linear(space_to_depth(x, patch), embed_w, embed_b)
    h, w, c = x.shape
    neigh = take(reshape(x, (h * w, c)), _mix_indices(h, w))
    mixed = gelu(linear(reshape(neigh, (h, w, 9 * c)), mix_w, mix_b))
    return add(x, mixed)


def pad_amounts(height: int, width: int, multiple: int) -> tuple[int, int, int, int]:
    """Symmetric zero padding (top, bottom, left, right) up to the next multiple."""
    ph = -height % multiple
    pw = -width % multiple
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


@dataclass
class ToyModel:
    config: RunConfig
    embed_w: Parameter
    embed_b: Parameter
    mix_w: Parameter
    mix_b: Parameter
    pool: list
    stack: cfm.CFMStack
    encode_calls: int = 0

    @classmethod
    def init(cls, config: RunConfig, rng: Rng | None = None) -> "ToyModel":
        rng = rng or Rng(config.seed)
        dt, c, p = config.dtype, config.c, config.patch
        embed_w = Parameter(rng.trunc_normal((3 * p * p, c), 0.02, dtype=dt), "embed.w")
        embed_b = Parameter(np.zeros(c, dtype=dt), "embed.b")
        mix_w = Parameter(rng.trunc_normal((9 * c, c), 0.02, dtype=dt), "mix.w")
        mix_b = Parameter(np.zeros(c, dtype=dt), "mix.b")
        pool = init_pool_params(config.schedule, c, rng, dt)
        stack = cfm.CFMStack.init(rng, c, config.schedule.s, config.schedule.m, config.heads,
                                  config.N, config.n_classes, dt)
        return cls(config, embed_w, embed_b, mix_w, mix_b, pool, stack)

    def parameters(self) -> list[Parameter]:
        pool = [t for pair in self.pool for t in pair]
        return [self.embed_w, self.embed_b, self.mix_w, self.mix_b] + pool + self.stack.parameters()

    @property
    def multiple(self) -> int:
        return self.config.patch * self.config.schedule.multiple

    def pad_image(self, image: np.ndarray) -> np.ndarray:
        t, b, l, r = pad_amounts(image.shape[0], image.shape[1], self.multiple)
        return np.pad(image, ((t, b), (l, r), (0, 0)))

    def encode(self, image: np.ndarray) -> Tensor:
        self.encode_calls += 1
        img = self.pad_image(np.asarray(image, dtype=self.config.dtype))
        return toy_encode(img, self.embed_w, self.embed_b, self.mix_w, self.mix_b,
                          self.config.patch)

    def segment(self, features: dict, image_hw: tuple[int, int]):
        """Offset -> features mapping to (logits, aux_logits) at the unpadded image size."""
        ctx = assemble_context(features, self.config.schedule, self.pool)
        logits, aux = cfm.forward(self.stack, features[0], ctx, self.config.schedule.s)
        return self._to_image(logits, image_hw), self._to_image(aux, image_hw)

    def _to_image(self, logits: Tensor, image_hw: tuple[int, int]) -> Tensor:
        h, w = image_hw
        t, b, l, r = pad_amounts(h, w, self.multiple)
        up = upsample_bilinear(logits, h + t + b, w + l + r)
        if t or b or l or r:
            up = crop(up, (slice(t, t + h), slice(l, l + w)))
        if up.shape[:2] != (h, w):
            raise DimensionError(f"logits {up.shape} do not match image {image_hw}")
        return up


def frame_indices(t: int, offsets) -> dict[int, int]:
    """Offset -> source frame index; offsets reaching before frame 0 clamp to frame 0."""
    return {k: max(t - k, 0) for k in list(offsets) + [0]}
