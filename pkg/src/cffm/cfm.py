"""Cross-frame feature mining: stacked non-self attention plus the MLP head.

Queries come from the target windows; keys and values are re-projected at
every layer from the same fixed context tokens, which are never updated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cffa import ContextTokenSet, WindowGrid, merge_windows, partition_windows
from .errors import DimensionError
from .tensor import (Parameter, Rng, Tensor, add, concat, cross_entropy, gelu, linear,
                     matmul, reshape, scale, softmax_rows, transpose)


def _proj(rng: Rng, d_in: int, d_out: int, name: str, dtype, std=0.02):
    return (Parameter(rng.trunc_normal((d_in, d_out), std, dtype=dtype), f"{name}.w"),
            Parameter(np.zeros(d_out, dtype=dtype), f"{name}.b"))


@dataclass
class AttentionLayer:
    q_w: Parameter
    q_b: Parameter
    k_w: Parameter
    k_b: Parameter
    v_w: Parameter
    v_b: Parameter
    bias_table: Parameter  # (heads, s*s, m), shared by all windows
    heads: int

    @classmethod
    def init(cls, rng: Rng, c: int, s: int, m: int, heads: int, dtype=np.float64,
             name: str = "layer"):
        if c % heads:
            raise DimensionError(f"c={c} is not divisible by heads={heads}")
        q = _proj(rng, c, c, f"{name}.q", dtype)
        k = _proj(rng, c, c, f"{name}.k", dtype)
        v = _proj(rng, c, c, f"{name}.v", dtype)
        table = Parameter(np.zeros((heads, s * s, m), dtype=dtype), f"{name}.bias_table")
        return cls(*q, *k, *v, table, heads)

    @property
    def c(self) -> int:
        return self.q_w.shape[0]

    @property
    def m(self) -> int:
        return self.bias_table.shape[2]

    @property
    def window_area(self) -> int:
        return self.bias_table.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.q_w, self.q_b, self.k_w, self.k_b, self.v_w, self.v_b, self.bias_table]


def _check_inputs(layer: AttentionLayer, x: Tensor, ctx: Tensor):
    c, m, area = layer.c, layer.m, layer.window_area
    if x.shape[-2:] != (area, c) or ctx.shape[-2:] != (m, c) or x.shape[:-2] != ctx.shape[:-2]:
        raise DimensionError(f"window {x.shape} / context {ctx.shape} do not fit a layer "
                             f"with s*s={area}, m={m}, c={c}")


def project_qkv(layer: AttentionLayer, window_feature: Tensor, context: Tensor):
    """Q from the window only; K and V from the context tokens only.

    Accepts single windows ((s*s, c) and (m, c)) or batches with a leading axis.
    """
    _check_inputs(layer, window_feature, context)
    q = linear(window_feature, layer.q_w, layer.q_b)
    k = linear(context, layer.k_w, layer.k_b)
    v = linear(context, layer.v_w, layer.v_b)
    return q, k, v


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, c = x.shape
    return transpose(reshape(x, (n, t, heads, c // heads)), (0, 2, 1, 3))


def attention_weights(layer: AttentionLayer, window_feature: Tensor, context: Tensor):
    """Per-head attention matrices, shape (..., heads, s*s, m), plus V split by head."""
    q, k, v = project_qkv(layer, window_feature, context)
    single = q.ndim == 2
    if single:
        q, k, v = (reshape(t, (1,) + t.shape) for t in (q, k, v))
    h = layer.heads
    qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)
    scores = matmul(qh, transpose(kh, (0, 1, 3, 2)))
    scores = scale(scores, 1.0 / math.sqrt(layer.c // h))
    attn = softmax_rows(add(scores, layer.bias_table))
    return attn, vh, single


def attention_update(layer: AttentionLayer, window_feature: Tensor, context: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(c/heads) + B) V per head, heads concatenated, plus residual."""
    attn, vh, single = attention_weights(layer, window_feature, context)
    out = matmul(attn, vh)  # (n, heads, s*s, d)
    n, h, t, d = out.shape
    out = reshape(transpose(out, (0, 2, 1, 3)), (n, t, h * d))
    if single:
        out = reshape(out, (t, h * d))
    return add(out, window_feature)


@dataclass
class CFMStack:
    layers: list[AttentionLayer]
    hidden_w: Parameter
    hidden_b: Parameter
    cls_w: Parameter
    cls_b: Parameter
    aux_w: Parameter
    aux_b: Parameter
    n_classes: int = field(init=False)

    def __post_init__(self):
        self.n_classes = self.cls_w.shape[1]
        if self.layers:
            shape = {(l.c, l.window_area, l.m, l.heads) for l in self.layers}
            if len(shape) != 1:
                raise DimensionError(f"layers disagree on (c, s*s, m, heads): {shape}")

    @classmethod
    def init(cls, rng: Rng, c: int, s: int, m: int, heads: int, n_layers: int,
             n_classes: int, dtype=np.float64):
        layers = [AttentionLayer.init(rng, c, s, m, heads, dtype, name=f"layer{i}")
                  for i in range(n_layers)]
        hidden = _proj(rng, 2 * c, c, "head.hidden", dtype)
        classifier = _proj(rng, c, n_classes, "head.cls", dtype)
        aux = _proj(rng, c, n_classes, "aux", dtype)
        return cls(layers, *hidden, *classifier, *aux)

    def parameters(self) -> list[Parameter]:
        out = [p for layer in self.layers for p in layer.parameters()]
        return out + [self.hidden_w, self.hidden_b, self.cls_w, self.cls_b,
                      self.aux_w, self.aux_b]


def mine(stack: CFMStack, windows: WindowGrid, ctx: ContextTokenSet) -> WindowGrid:
    """Run every layer in turn; each layer's residual adds its own input."""
    x = windows.tokens
    if ctx.tokens.shape[0] != x.shape[0]:
        raise DimensionError(f"{x.shape[0]} windows but {ctx.tokens.shape[0]} context sets")
    for layer in stack.layers:
        x = attention_update(layer, x, ctx.tokens)
    return WindowGrid(x, windows.h, windows.w, windows.s)


def segment_head(stack: CFMStack, enhanced: Tensor, features: Tensor) -> Tensor:
    """Per-pixel MLP on concat(enhanced, features): (h, w, 2c) -> (h, w, K)."""
    if enhanced.shape != features.shape:
        raise DimensionError(f"enhanced {enhanced.shape} vs features {features.shape}")
    x = concat([enhanced, features], axis=-1)
    x = gelu(linear(x, stack.hidden_w, stack.hidden_b))
    return linear(x, stack.cls_w, stack.cls_b)


def aux_head(stack: CFMStack, features: Tensor) -> Tensor:
    return linear(features, stack.aux_w, stack.aux_b)


def forward(stack: CFMStack, features: Tensor, ctx: ContextTokenSet, s: int):
    """Target features (h, w, c) -> (logits, aux_logits), both (h, w, K)."""
    windows = partition_windows(features, s)
    enhanced = merge_windows(mine(stack, windows, ctx))
    return segment_head(stack, enhanced, features), aux_head(stack, features)


def loss(logits: Tensor, labels, aux_logits: Tensor | None = None, aux_weight: float = 0.4,
         ignore_index: int = 255) -> Tensor:
    """Mean CE on the main logits plus ``aux_weight`` times CE on the auxiliary logits."""
    main = cross_entropy(logits, labels, ignore_index)
    if aux_logits is None or aux_weight == 0:
        return main
    return add(main, scale(cross_entropy(aux_logits, labels, ignore_index), aux_weight))
