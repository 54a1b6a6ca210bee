"""Joint full self-attention over every token of every frame.

This is the naive alternative the windowed scheme is compared against:
(l+1)*h*w tokens all attend to each other. Query rows are processed in
chunks so the score matrix never has to exist in full.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import (Parameter, Rng, Tensor, add, concat, linear, matmul, reshape, scale,
                     softmax_rows, transpose)


@dataclass
class SelfAttentionLayer:
    q_w: Parameter
    q_b: Parameter
    k_w: Parameter
    k_b: Parameter
    v_w: Parameter
    v_b: Parameter
    heads: int

    @classmethod
    def init(cls, rng: Rng, c: int, heads: int, dtype=np.float64, name="full"):
        if c % heads:
            raise DimensionError(f"c={c} is not divisible by heads={heads}")
        ws = []
        for tag in "qkv":
            ws.append(Parameter(rng.trunc_normal((c, c), 0.02, dtype=dtype), f"{name}.{tag}.w"))
            ws.append(Parameter(np.zeros(c, dtype=dtype), f"{name}.{tag}.b"))
        return cls(*ws, heads)

    @classmethod
    def from_layer(cls, layer) -> "SelfAttentionLayer":
        """Reuse a windowed layer's projections (its bias table has no meaning here)."""
        return cls(layer.q_w, layer.q_b, layer.k_w, layer.k_b, layer.v_w, layer.v_b, layer.heads)


def _heads(x: Tensor, heads: int) -> Tensor:
    t, c = x.shape
    return transpose(reshape(x, (t, heads, c // heads)), (1, 0, 2))


def full_self_attention(layer: SelfAttentionLayer, tokens: Tensor, chunk: int = 512) -> Tensor:
    """tokens (T, c) -> tokens + MHA(tokens), queries processed ``chunk`` rows at a time."""
    t, c = tokens.shape
    h = layer.heads
    d = c // h
    q = _heads(scale(linear(tokens, layer.q_w, layer.q_b), 1.0 / math.sqrt(d)), h)
    kt = transpose(_heads(linear(tokens, layer.k_w, layer.k_b), h), (0, 2, 1))
    v = _heads(linear(tokens, layer.v_w, layer.v_b), h)
    outs = []
    for start in range(0, t, chunk):
        qc = q[:, start:start + chunk, :]
        attn = softmax_rows(matmul(qc, kt))
        outs.append(matmul(attn, v))
    out = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    out = reshape(transpose(out, (1, 0, 2)), (t, c))
    return add(out, tokens)


def joint_forward(layers, frames, chunk: int = 512) -> Tensor:
    """Stack every frame's (h, w, c) features into one token set and run all layers."""
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DimensionError(f"frame shapes differ: {sorted(shapes)}")
    h, w, c = frames[0].shape
    x = concat([reshape(f, (h * w, c)) for f in frames], axis=0)
    for layer in layers:
        x = full_self_attention(layer, x, chunk)
    return x
