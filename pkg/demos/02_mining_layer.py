"""
One mining layer
================

Queries come from a target window; keys and values from the context tokens.
"""

import numpy as np

from cffm.baseline import SelfAttentionLayer, full_self_attention
from cffm.cfm import AttentionLayer, attention_update, attention_weights
from cffm.tensor import Rng, Tensor

rng = Rng(1)
layer = AttentionLayer.init(rng, c=8, s=2, m=6, heads=2)
window = Tensor(rng.normal((4, 8)))
context = Tensor(rng.normal((6, 8)))

# every query row spreads its attention over the 6 context tokens
attn, _, _ = attention_weights(layer, window, context)
print("attention shape (batch, heads, queries, tokens):", attn.shape)
print("row sums:", attn.data.sum(-1).round(12).ravel())

# when the context *is* the window the layer is plain self-attention
ctx_layer = AttentionLayer.init(rng, c=8, s=3, m=9, heads=2)
x = Tensor(rng.normal((9, 8)))
ours = attention_update(ctx_layer, x, x).data
ref = full_self_attention(SelfAttentionLayer.from_layer(ctx_layer), x).data
print("max diff vs full self-attention:", np.abs(ours - ref).max())

# zero value projection: only the residual is left
layer.v_w.data[:] = 0
print("zero values keep the input:", np.array_equal(attention_update(layer, window, context).data,
                                                    window.data))
