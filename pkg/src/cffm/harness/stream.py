"""Streaming inference: every frame is encoded once and its features reused as context."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ContractError
from ..tensor import Tensor, no_grad
from .model import ToyModel, frame_indices


class FeatureCache:
    """Ring buffer holding the most recent ``capacity`` per-frame feature maps."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError("cache capacity must be >= 1")
        self.capacity = capacity
        self._items: OrderedDict[int, Tensor] = OrderedDict()

    def put(self, index: int, features: Tensor):
        self._items[index] = features
        self._items.move_to_end(index)
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)

    def get(self, index: int) -> Tensor:
        return self._items[index]

    def __contains__(self, index):
        return index in self._items

    def __len__(self):
        return len(self._items)

    @property
    def earliest(self) -> int:
        return next(iter(self._items))


def stream_segment(frames, model: ToyModel) -> list[Tensor]:
    """Per-frame logits (H, W, K) for a clip processed strictly in order.

    During warm-up (t < k) a missing reference frame is replaced by the
    earliest frame seen so far.
    """
    offsets = model.config.offsets
    horizon = max(offsets, default=0)
    if len(frames) < horizon + 1:
        raise ContractError(f"clip of {len(frames)} frames is shorter than the "
                            f"farthest offset {horizon} + 1")
    cache = FeatureCache(horizon + 1)
    calls_before = model.encode_calls
    out = []
    for t, frame in enumerate(frames):
        cache.put(t, model.encode(frame))
        feats = {k: cache.get(max(i, cache.earliest)) for k, i in frame_indices(t, offsets).items()}
        logits, _ = model.segment(feats, frame.shape[:2])
        out.append(logits)
    if model.encode_calls - calls_before != len(frames):
        raise AssertionError("streaming encoded a frame more than once")
    return out


def recompute_segment(frames, model: ToyModel, t: int) -> Tensor:
    """Logits for frame ``t`` with every needed feature map encoded from scratch."""
    feats = {k: model.encode(frames[i]) for k, i in frame_indices(t, model.config.offsets).items()}
    logits, _ = model.segment(feats, frames[t].shape[:2])
    return logits


def predict_masks(frames, model: ToyModel) -> np.ndarray:
    with no_grad():
        logits = stream_segment(frames, model)
    return np.stack([l.data.argmax(axis=-1) for l in logits]).astype(np.uint8)
