"""Minimal dense tensor engine with hand-written reverse-mode gradients.

Values are numpy arrays wrapped in :class:`Tensor`. Every op below computes its
forward result eagerly and, when any input requires a gradient, records a
closure that maps the output gradient to one gradient per input. ``backward``
walks the recorded graph in reverse topological order.

Precision follows the inputs: float64 for verification, float32 for speed.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "Parameter", "Rng", "MultiplyTally", "count_multiplies", "no_grad",
    "backward", "zero_grad",
    "add", "sub", "scale", "mul", "matmul", "linear", "reshape", "transpose",
    "concat", "take", "crop", "softmax_rows", "gelu", "relu", "tensor_sum",
    "mean", "cross_entropy", "space_to_depth", "depth_to_space",
    "neighborhood_gather", "neighborhood_indices", "upsample_bilinear",
]


class Tensor:
    """Dense row-major array plus an optional gradient record."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"all extents must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return crop(self, index)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class Parameter(Tensor):
    """Learnable leaf tensor; ``grad`` starts as zeros of the same shape."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def zero_grad(params: Sequence[Parameter]):
    for p in params:
        p.zero_grad()


class Rng:
    """Seeded generator: numpy's PCG64 bit generator with Generator methods.

    PCG64 output and numpy's normal/uniform transforms are fixed for a given
    numpy release, so one seed yields one draw sequence on every platform.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) % 2**64
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        return (self.generator.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=np.float64):
        return self.generator.uniform(low, high, shape).astype(dtype)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def trunc_normal(self, shape, std: float = 0.02, bound: float = 2.0, dtype=np.float64):
        """Normal draws with |z| > bound (in std units) redrawn until inside."""
        z = self.generator.standard_normal(shape)
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self.generator.standard_normal(int(bad.sum()))
            bad = np.abs(z) > bound
        return (z * std).astype(dtype)


# ---------------------------------------------------------------- multiply tally

class MultiplyTally:
    """Running count of scalar multiplies issued by ``matmul``."""

    def __init__(self):
        self.count = 0

    def __int__(self):
        return self.count

    def __repr__(self):
        return f"MultiplyTally({self.count})"


_active_tallies: list[MultiplyTally] = []


@contextlib.contextmanager
def count_multiplies() -> Iterator[MultiplyTally]:
    """Count forward matmul multiplies (M*K*P per product) inside the block.

    Tallies nest; an inner block's work is counted by every enclosing tally.
    Not thread-safe: instrumented runs must be single-threaded.
    """
    tally = MultiplyTally()
    _active_tallies.append(tally)
    try:
        yield tally
    finally:
        _active_tallies.remove(tally)


def _tally(n: int):
    for t in _active_tallies:
        t.count += n


# ---------------------------------------------------------------- graph plumbing

_recording = [True]


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (inference, timing)."""
    prev = _recording[0]
    _recording[0] = False
    try:
        yield
    finally:
        _recording[0] = prev


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, grad_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _recording[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise

def _suffix_broadcast(a: Tensor, b: Tensor, opname: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(f"{opname}: shapes {sa} and {sb} are not suffix-compatible")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    """Elementwise sum; the lower-rank operand may match a trailing suffix."""
    a, b = _as_tensor(a), _as_tensor(b)
    _suffix_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _suffix_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    return _result(x.data * x.data.dtype.type(alpha), (x,),
                   lambda g: (g * g.dtype.type(alpha),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    y = 0.5 * xd * (1.0 + np.tanh(_GELU_C * (xd + 0.044715 * xd ** 3)))
    return _result(y.astype(x.dtype), (x,), lambda g: (g * _gelu_grad(xd),))


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return scale(tensor_sum(x), 1.0 / n)


# ---------------------------------------------------------------- products

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree exactly.

    Adds (batch * M * K * P) to every active multiply tally.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    batch = int(np.prod(a.shape[:-2], dtype=np.int64))
    m, k = a.shape[-2:]
    p = b.shape[-1]
    _tally(batch * m * k * p)
    ad, bd = a.data, b.data
    return _result(np.matmul(ad, bd), (a, b),
                   lambda g: (np.matmul(g, np.swapaxes(bd, -1, -2)),
                              np.matmul(np.swapaxes(ad, -1, -2), g)))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b`` applied over the trailing axis."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weights {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weights {w.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, w.shape[0])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[1],))


# ---------------------------------------------------------------- layout

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {src} -> {tuple(shape)}: {exc}") from None
    return _result(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in xs]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(xs), grad_fn)


def take(x: Tensor, index) -> Tensor:
    """Gather along axis 0: out[...] = x[index[...]], shape index.shape + x.shape[1:]."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"take: index out of range for axis of length {x.shape[0]}")
    src = x.shape

    def grad_fn(g):
        out = np.zeros(src, dtype=g.dtype)
        np.add.at(out, index.reshape(-1), g.reshape((-1,) + src[1:]))
        return (out,)

    return _result(x.data[index], (x,), grad_fn)


def crop(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing with a scatter gradient."""
    src = x.shape
    out = np.ascontiguousarray(x.data[index])

    def grad_fn(g):
        full = np.zeros(src, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def space_to_depth(x: Tensor, p: int) -> Tensor:
    """(H, W, C) -> (H/p, W/p, p*p*C).

    Each output cell holds the p x p patch's channel vectors, patch positions
    in row-major order, channels contiguous within a position.
    """
    if x.ndim != 3:
        raise DimensionError(f"space_to_depth expects (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if p < 1 or h % p or w % p:
        raise DimensionError(f"space_to_depth: p={p} does not divide {h}x{w}")
    y = reshape(x, (h // p, p, w // p, p, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return reshape(y, (h // p, w // p, p * p * c))


def depth_to_space(x: Tensor, p: int) -> Tensor:
    """Exact inverse of :func:`space_to_depth`."""
    hp, wp, d = x.shape
    if p < 1 or d % (p * p):
        raise DimensionError(f"depth_to_space: depth {d} not divisible by p^2={p * p}")
    c = d // (p * p)
    y = reshape(x, (hp, wp, p, p, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return reshape(y, (hp * p, wp * p, c))


def neighborhood_indices(extent: tuple[int, int], center: tuple[int, int], g: int) -> np.ndarray:
    """Flat row-major cell indices of the clamped g x g block around ``center``."""
    gh, gw = extent
    offs = np.arange(g) - g // 2
    rows = np.clip(center[0] + offs, 0, gh - 1)
    cols = np.clip(center[1] + offs, 0, gw - 1)
    return (rows[:, None] * gw + cols[None, :]).reshape(-1)


def neighborhood_gather(grid: Tensor, center: tuple[int, int], g: int) -> Tensor:
    """g*g cells nearest ``center``; indices past the border clamp onto it."""
    if grid.ndim != 3:
        raise DimensionError(f"neighborhood_gather expects (Gh, Gw, C), got {grid.shape}")
    if g < 1:
        raise ContractError(f"g must be >= 1, got {g}")
    gh, gw, c = grid.shape
    idx = neighborhood_indices((gh, gw), center, g)
    return take(reshape(grid, (gh * gw, c)), idx)


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    # half-pixel centers, edge-clamped (align_corners=False)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of (h, w, C); not counted by the multiply tally."""
    h, w, _ = x.shape
    ah = _interp_matrix(out_h, h, x.dtype)
    aw = _interp_matrix(out_w, w, x.dtype)
    y = np.einsum("ih,hwc,jw->ijc", ah, x.data, aw, optimize=True)
    return _result(y, (x,),
                   lambda g: (np.einsum("ih,ijc,jw->hwc", ah, g, aw, optimize=True),))


# ---------------------------------------------------------------- softmax / loss

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    top = x.data.max(axis=-1, keepdims=True)
    # a NaN anywhere propagates into the max; -inf only shows up in the min
    if not (np.isfinite(top).all() and np.isfinite(x.data.min())):
        raise NumericError("softmax_rows: input contains non-finite values")
    y = x.data - top
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), grad_fn)


def cross_entropy(logits: Tensor, labels, ignore_index: int = 255) -> Tensor:
    """Mean softmax cross entropy over all positions whose label != ignore_index."""
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: labels {labels.shape} vs logits {logits.shape}")
    valid = labels != ignore_index
    lab = labels[valid]
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ContractError(f"cross_entropy: label outside [0, {k}) and not ignore_index")
    n = int(valid.sum())
    if n == 0:
        raise ContractError("cross_entropy: every label is ignore_index")
    if not np.isfinite(logits.data).all():
        raise NumericError("cross_entropy: non-finite logits")
    flat = logits.data.reshape(-1, k)
    vflat = valid.reshape(-1)
    tgt = np.where(valid, labels, 0).reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -(logp[np.arange(flat.shape[0]), tgt] * vflat).sum() / n

    def grad_fn(g):
        d = np.exp(logp)
        d[np.arange(flat.shape[0]), tgt] -= 1.0
        d *= vflat[:, None] * (g / n)
        return (d.reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn)
