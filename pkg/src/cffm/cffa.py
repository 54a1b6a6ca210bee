"""Coarse-to-fine context assembling.

The target feature map is tiled into s x s windows. Every frame in the
schedule is pooled with its own kernel p (space-to-depth + FC back to c
channels), and each window collects an (r/p) x (r/p) block of pooled cells
from every frame. The concatenated blocks are the window's context tokens.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import (Parameter, Rng, Tensor, concat, linear, neighborhood_indices,
                     reshape, space_to_depth, take, transpose)


@dataclass(frozen=True)
class ScheduleEntry:
    offset: int  # frames before the target; 0 is the target itself
    r: int  # receptive field, in full-resolution feature cells
    p: int  # pooling kernel, in feature cells

    @property
    def tokens(self) -> int:
        return (self.r // self.p) ** 2


@dataclass
class ContextSchedule:
    """Ordered (offset, r, p) plan, farthest frame first, target entries last."""

    entries: list[ScheduleEntry]
    s: int

    def __post_init__(self):
        self.entries = [e if isinstance(e, ScheduleEntry) else ScheduleEntry(*e)
                        for e in self.entries]
        self.validate()

    def validate(self):
        if not self.entries:
            raise ContractError("schedule needs at least one entry")
        if self.s < 1:
            raise ContractError(f"window size must be >= 1, got {self.s}")
        for e in self.entries:
            if e.offset < 0:
                raise ContractError(f"negative offset in {e}")
            if not (e.r >= e.p >= 1) or e.r % e.p:
                raise ContractError(f"entry {e} needs r >= p >= 1 and p | r")
        offsets = [e.offset for e in self.entries]
        if any(a < b for a, b in zip(offsets, offsets[1:])):
            raise ContractError(f"offsets must be non-increasing, got {offsets}")
        if offsets[-1] != 0:
            raise ContractError("schedule must contain the target (offset 0)")
        # extra target sets (repeated offset 0) are exempt from the ordering rules
        primary = self.primary_entries()
        ps = [e.p for e in primary]
        if any(a < b for a, b in zip(ps, ps[1:])):
            raise ContractError(f"pooling kernels must not grow toward the target, got {ps}")
        rs = [e.r for e in primary]
        if any(a < b for a, b in zip(rs, rs[1:])):
            warnings.warn(f"receptive fields grow toward the target: {rs}", stacklevel=3)

    def primary_entries(self) -> list[ScheduleEntry]:
        seen, out = set(), []
        for e in self.entries:
            if e.offset not in seen:
                seen.add(e.offset)
                out.append(e)
        return out

    @property
    def m(self) -> int:
        return sum(e.tokens for e in self.entries)

    @property
    def offsets(self) -> list[int]:
        """Distinct frame offsets, farthest first (includes 0)."""
        return [e.offset for e in self.primary_entries()]

    @property
    def reference_offsets(self) -> list[int]:
        return [k for k in self.offsets if k > 0]

    @property
    def multiple(self) -> int:
        """Smallest extent divisible by s and by every pooling kernel."""
        return int(np.lcm.reduce([self.s] + [e.p for e in self.entries]))

    def to_dict(self) -> dict:
        return {"s": self.s, "entries": [{"offset": e.offset, "r": e.r, "p": e.p}
                                         for e in self.entries]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContextSchedule":
        return cls([ScheduleEntry(int(e["offset"]), int(e["r"]), int(e["p"]))
                    for e in d["entries"]], int(d["s"]))

    @classmethod
    def default(cls) -> "ContextSchedule":
        """Offsets {9, 6, 3}, r={49,20,6,7}, p={7,4,2,1}, s=7, extra target set (35, 5)."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls([ScheduleEntry(9, 49, 7), ScheduleEntry(6, 20, 4),
                        ScheduleEntry(3, 6, 2), ScheduleEntry(0, 7, 1),
                        ScheduleEntry(0, 35, 5)], s=7)


@dataclass
class WindowGrid:
    """Windows of a (h, w, c) map as a (n_windows, s*s, c) tensor, row-major."""

    tokens: Tensor
    h: int
    w: int
    s: int

    @property
    def c(self) -> int:
        return self.tokens.shape[-1]

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def layout(self) -> tuple[int, int]:
        return self.h // self.s, self.w // self.s


def partition_windows(f: Tensor, s: int) -> WindowGrid:
    if f.ndim != 3:
        raise DimensionError(f"expected (h, w, c) features, got {f.shape}")
    h, w, c = f.shape
    if s < 1 or h % s or w % s:
        raise DimensionError(f"window size {s} does not divide {h}x{w}")
    y = reshape(f, (h // s, s, w // s, s, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return WindowGrid(reshape(y, ((h // s) * (w // s), s * s, c)), h, w, s)


def merge_windows(grid: WindowGrid) -> Tensor:
    """Inverse of :func:`partition_windows`."""
    nh, nw = grid.layout
    s, c = grid.s, grid.c
    y = reshape(grid.tokens, (nh, nw, s, s, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return reshape(y, (grid.h, grid.w, c))


@dataclass
class PooledFrame:
    grid: Tensor  # (h/p, w/p, c)
    offset: int
    p: int


def pool_reduce(f: Tensor, p: int, proj: Tensor, bias: Tensor, offset: int = 0) -> PooledFrame:
    h, w, c = f.shape
    if proj.shape != (c * p * p, c):
        raise DimensionError(f"pooling projection {proj.shape} does not fit c={c}, p={p}")
    e = linear(space_to_depth(f, p), proj, bias)
    return PooledFrame(e, offset, p)


def init_pool_params(schedule: ContextSchedule, c: int, rng: Rng, dtype=np.float64,
                     std: float = 0.02) -> list[tuple[Parameter, Parameter]]:
    """One (c*p*p -> c) projection per schedule entry."""
    params = []
    for j, e in enumerate(schedule.entries):
        w = Parameter(rng.trunc_normal((c * e.p * e.p, c), std, dtype=dtype), f"pool{j}.w")
        b = Parameter(np.zeros(c, dtype=dtype), f"pool{j}.b")
        params.append((w, b))
    return params


def _window_centers(layout: tuple[int, int], s: int) -> tuple[np.ndarray, np.ndarray]:
    nh, nw = layout
    idx = np.arange(nh * nw)
    return (idx // nw) * s + s // 2, (idx % nw) * s + s // 2


def _fit_center(center: np.ndarray, g: int, extent: int) -> np.ndarray:
    # slide the block inside the grid when it fits; clamping handles the rest
    start = np.clip(center - g // 2, 0, max(extent - g, 0))
    return start + g // 2


def context_indices(pooled_extent: tuple[int, int], layout: tuple[int, int], s: int,
                    p: int, g: int) -> np.ndarray:
    """(n_windows, g*g) flat pooled-cell indices for every window."""
    rc, cc = _window_centers(layout, s)
    rows = _fit_center(rc // p, g, pooled_extent[0])
    cols = _fit_center(cc // p, g, pooled_extent[1])
    return np.stack([neighborhood_indices(pooled_extent, (r, c), g)
                     for r, c in zip(rows, cols)])


def gather_context(e: PooledFrame, window_index: int, layout: tuple[int, int], s: int,
                   r: int) -> Tensor:
    """Context tokens ((r/p)^2, c) that window ``window_index`` draws from one pooled frame."""
    if r % e.p:
        raise ContractError(f"r={r} is not a multiple of p={e.p}")
    n = layout[0] * layout[1]
    if not 0 <= window_index < n:
        raise IndexError(f"window index {window_index} outside [0, {n})")
    gh, gw, c = e.grid.shape
    idx = context_indices((gh, gw), layout, s, e.p, r // e.p)[window_index]
    return take(reshape(e.grid, (gh * gw, c)), idx)


@dataclass
class ContextTokenSet:
    tokens: Tensor  # (n_windows, m, c)
    m: int
    segments: list[tuple[int, int, int]] = field(default_factory=list)  # (entry, start, stop)

    def window(self, i: int) -> Tensor:
        return self.tokens[i]


def _frame_map(frames) -> dict[int, Tensor]:
    if isinstance(frames, Mapping):
        return dict(frames)
    out: dict[int, Tensor] = {}
    for k, f in frames:
        if k in out:
            raise ContractError(f"offset {k} supplied twice")
        out[k] = f
    return out


def assemble_context(frames, schedule: ContextSchedule,
                     pool_params: Sequence[tuple[Tensor, Tensor]]) -> ContextTokenSet:
    """Build every window's context tokens.

    ``frames`` maps offset -> (h, w, c) features (a mapping or (offset, tensor)
    pairs); supply order is irrelevant, schedule order fixes the token order.
    """
    frames = _frame_map(frames)
    if len(pool_params) != len(schedule.entries):
        raise ContractError(f"{len(pool_params)} pooling projections for "
                            f"{len(schedule.entries)} schedule entries")
    missing = [k for k in schedule.offsets if k not in frames]
    if missing:
        raise ContractError(f"no features for offsets {missing}")
    shapes = {frames[k].shape for k in schedule.offsets}
    if len(shapes) != 1:
        raise ContractError(f"frame features disagree in shape: {sorted(shapes)}")
    h, w, c = shapes.pop()
    s = schedule.s
    if h % s or w % s:
        raise DimensionError(f"window size {s} does not divide {h}x{w}")
    layout = (h // s, w // s)

    parts, segments, start = [], [], 0
    for j, (e, (proj, bias)) in enumerate(zip(schedule.entries, pool_params)):
        pooled = pool_reduce(frames[e.offset], e.p, proj, bias, e.offset)
        gh, gw, _ = pooled.grid.shape
        idx = context_indices((gh, gw), layout, s, e.p, e.r // e.p)
        parts.append(take(reshape(pooled.grid, (gh * gw, c)), idx))
        segments.append((j, start, start + e.tokens))
        start += e.tokens
    tokens = parts[0] if len(parts) == 1 else concat(parts, axis=1)
    return ContextTokenSet(tokens, schedule.m, segments)
