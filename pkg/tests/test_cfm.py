import math

import numpy as np
import pytest

from cffm import cfm
from cffm.baseline import SelfAttentionLayer, full_self_attention
from cffm.cffa import ContextTokenSet, partition_windows
from cffm.cfm import AttentionLayer, CFMStack, attention_update, attention_weights
from cffm.errors import ContractError, DimensionError
from cffm.tensor import Parameter, Rng, Tensor, backward, mul, no_grad, tensor_sum

from conftest import assert_grads_match


def random_layer(rng, c, s, m, heads, std=0.5, dtype=np.float64):
    def p(shape, name):
        return Parameter(rng.standard_normal(shape).astype(dtype) * std, name)
    return AttentionLayer(p((c, c), "q.w"), p((c,), "q.b"), p((c, c), "k.w"), p((c,), "k.b"),
                          p((c, c), "v.w"), p((c,), "v.b"), p((heads, s * s, m), "bias"),
                          heads)


def reference_update(layer, x, ctx):
    """Plain numpy non-self attention for one window."""
    q = x @ layer.q_w.data + layer.q_b.data
    k = ctx @ layer.k_w.data + layer.k_b.data
    v = ctx @ layer.v_w.data + layer.v_b.data
    h, c = layer.heads, x.shape[1]
    d = c // h
    out = np.zeros_like(x)
    for i in range(h):
        sl = slice(i * d, (i + 1) * d)
        z = q[:, sl] @ k[:, sl].T / math.sqrt(d) + layer.bias_table.data[i]
        a = np.exp(z - z.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        out[:, sl] = a @ v[:, sl]
    return out + x


def gelu_ref(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


# ------------------------------------------------------------------ single layer

@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_matches_reference(rng, heads):
    layer = random_layer(rng, 8, 3, 11, heads)
    x, ctx = rng.standard_normal((9, 8)), rng.standard_normal((11, 8))
    got = attention_update(layer, Tensor(x), Tensor(ctx)).data
    np.testing.assert_allclose(got, reference_update(layer, x, ctx), rtol=1e-12, atol=1e-12)


def test_attention_batched_equals_per_window(rng):
    layer = random_layer(rng, 4, 2, 5, 2)
    x, ctx = rng.standard_normal((6, 4, 4)), rng.standard_normal((6, 5, 4))
    got = attention_update(layer, Tensor(x), Tensor(ctx)).data
    for i in range(6):
        np.testing.assert_allclose(got[i], reference_update(layer, x[i], ctx[i]), atol=1e-12)


def test_identity_projections(rng):
    c, s, m = 4, 2, 6
    eye, zero = np.eye(c), np.zeros(c)
    layer = AttentionLayer(Parameter(eye), Parameter(zero), Parameter(eye), Parameter(zero),
                           Parameter(eye), Parameter(zero),
                           Parameter(np.zeros((1, s * s, m))), 1)
    x, ctx = rng.standard_normal((4, c)), rng.standard_normal((m, c))
    z = x @ ctx.T / 2.0
    a = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(attention_update(layer, Tensor(x), Tensor(ctx)).data,
                               a @ ctx + x, atol=1e-13)


def test_zero_values_leave_input_untouched(rng):
    layer = random_layer(rng, 6, 2, 7, 3)
    layer.v_w.data[:] = 0
    layer.v_b.data[:] = 0
    x = rng.standard_normal((4, 6))
    out = attention_update(layer, Tensor(x), Tensor(rng.standard_normal((7, 6)))).data
    assert np.array_equal(out, x)


def test_single_context_token(rng):
    layer = random_layer(rng, 4, 2, 1, 2)
    x, ctx = rng.standard_normal((4, 4)), rng.standard_normal((1, 4))
    attn, _, _ = attention_weights(layer, Tensor(x), Tensor(ctx))
    assert np.array_equal(attn.data, np.ones_like(attn.data))
    v = ctx @ layer.v_w.data + layer.v_b.data
    np.testing.assert_allclose(attention_update(layer, Tensor(x), Tensor(ctx)).data,
                               x + v, atol=1e-14)


@pytest.mark.parametrize("heads", [1, 2])
def test_self_context_reduces_to_full_attention(rng, heads):
    # context = the window itself, zero bias table -> ordinary self-attention
    layer = random_layer(rng, 8, 3, 9, heads)
    layer.bias_table.data[:] = 0
    x = rng.standard_normal((9, 8))
    ours = attention_update(layer, Tensor(x), Tensor(x)).data
    full = full_self_attention(SelfAttentionLayer.from_layer(layer), Tensor(x)).data
    assert np.max(np.abs(ours - full)) <= 1e-10


def test_attention_rows_sum_to_one_float32(rng):
    layer = random_layer(rng, 8, 4, 30, 2, std=2.0, dtype=np.float32)
    x = rng.standard_normal((5, 16, 8)).astype(np.float32)
    ctx = rng.standard_normal((5, 30, 8)).astype(np.float32)
    attn, _, _ = attention_weights(layer, Tensor(x), Tensor(ctx))
    assert attn.data.dtype == np.float32
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)


def test_shape_errors(rng):
    layer = random_layer(rng, 4, 2, 5, 1)
    with pytest.raises(DimensionError):
        attention_update(layer, Tensor(np.zeros((4, 4))), Tensor(np.zeros((6, 4))))
    with pytest.raises(DimensionError):
        attention_update(layer, Tensor(np.zeros((9, 4))), Tensor(np.zeros((5, 4))))
    with pytest.raises(DimensionError):
        AttentionLayer.init(Rng(0), 6, 2, 5, heads=4)


def test_init_conventions():
    layer = AttentionLayer.init(Rng(0), 32, 4, 10, 2, name="layer3")
    assert layer.q_w.name == "layer3.q.w" and layer.bias_table.shape == (2, 16, 10)
    assert np.all(layer.bias_table.data == 0) and np.all(layer.k_b.data == 0)
    assert np.abs(layer.v_w.data).max() <= 0.04


# ------------------------------------------------------------------ stack

def _stack(rng, c=4, s=2, m=5, heads=2, n_layers=2, k=3, std=0.5):
    st = CFMStack.init(Rng(int(rng.integers(1 << 30))), c, s, m, heads, n_layers, k)
    for p in st.parameters():
        p.data[:] = rng.standard_normal(p.shape) * std
    return st


def test_layers_reuse_fixed_context(rng):
    st = _stack(rng, n_layers=2)
    feats = rng.standard_normal((4, 6, 4))
    ctx_np = rng.standard_normal((6, 5, 4))
    ctx = ContextTokenSet(Tensor(ctx_np.copy()), 5, [])
    windows = partition_windows(Tensor(feats), 2)
    out = cfm.mine(st, windows, ctx).tokens.data
    for i in range(6):
        x = windows.tokens.data[i]
        for layer in st.layers:
            x = reference_update(layer, x, ctx_np[i])
        np.testing.assert_allclose(out[i], x, atol=1e-12)
    assert np.array_equal(ctx.tokens.data, ctx_np)


def test_zero_layers_is_identity(rng):
    st = _stack(rng, n_layers=0)
    windows = partition_windows(Tensor(rng.standard_normal((4, 4, 4))), 2)
    ctx = ContextTokenSet(Tensor(rng.standard_normal((4, 5, 4))), 5, [])
    assert np.array_equal(cfm.mine(st, windows, ctx).tokens.data, windows.tokens.data)


def test_window_count_mismatch(rng):
    st = _stack(rng)
    windows = partition_windows(Tensor(rng.standard_normal((4, 4, 4))), 2)
    ctx = ContextTokenSet(Tensor(rng.standard_normal((3, 5, 4))), 5, [])
    with pytest.raises(DimensionError):
        cfm.mine(st, windows, ctx)


def test_head_matches_reference(rng):
    st = _stack(rng, c=4, k=3)
    e, f = rng.standard_normal((2, 2, 4)), rng.standard_normal((2, 2, 4))
    hidden = gelu_ref(np.concatenate([e, f], -1) @ st.hidden_w.data + st.hidden_b.data)
    want = hidden @ st.cls_w.data + st.cls_b.data
    got = cfm.segment_head(st, Tensor(e), Tensor(f)).data
    np.testing.assert_allclose(got, want, atol=1e-12)
    np.testing.assert_allclose(cfm.aux_head(st, Tensor(f)).data,
                               f @ st.aux_w.data + st.aux_b.data, atol=1e-12)


def test_head_zero_input_single_class():
    st = CFMStack.init(Rng(0), 4, 2, 5, 1, 1, 1)
    st.cls_b.data[:] = 0.75
    out = cfm.segment_head(st, Tensor(np.zeros((3, 3, 4))), Tensor(np.zeros((3, 3, 4)))).data
    assert out.shape == (3, 3, 1) and np.all(out == 0.75)


def test_forward_shapes(rng):
    st = _stack(rng, c=4, s=2, m=5, k=3)
    ctx = ContextTokenSet(Tensor(rng.standard_normal((6, 5, 4))), 5, [])
    logits, aux = cfm.forward(st, Tensor(rng.standard_normal((4, 6, 4))), ctx, 2)
    assert logits.shape == aux.shape == (4, 6, 3)


# ------------------------------------------------------------------ loss

def test_loss_uniform_logits_is_log_k():
    for k in (2, 5, 19):
        v = cfm.loss(Tensor(np.zeros((3, 4, k))), np.zeros((3, 4), int), None).item()
        assert abs(v - math.log(k)) < 1e-12


def test_loss_aux_weighting(rng):
    logits, aux = Tensor(rng.standard_normal((3, 3, 4))), Tensor(rng.standard_normal((3, 3, 4)))
    labels = rng.integers(0, 4, (3, 3))
    main = cfm.loss(logits, labels, None).item()
    auxv = cfm.loss(aux, labels, None).item()
    assert cfm.loss(logits, labels, aux, 0.0).item() == main
    assert abs(cfm.loss(logits, labels, aux).item() - (main + 0.4 * auxv)) < 1e-12


def test_loss_ignore_and_errors():
    logits = Tensor(np.zeros((1, 2, 3)))
    logits.data[0, 0] = [5.0, 0.0, 0.0]
    v = cfm.loss(logits, np.array([[0, 255]]), None).item()
    assert abs(v - (-5 + math.log(math.exp(5) + 2))) < 1e-12
    with pytest.raises(ContractError):
        cfm.loss(logits, np.array([[255, 255]]), None)
    with pytest.raises(ContractError):
        cfm.loss(logits, np.array([[0, 3]]), None)


# ------------------------------------------------------------------ gradients

def test_attention_gradients(rng):
    layer = random_layer(rng, 4, 2, 5, 2)
    x = Parameter(rng.standard_normal((3, 4, 4)), "x")
    ctx = Parameter(rng.standard_normal((3, 5, 4)), "ctx")
    w = rng.standard_normal((3, 4, 4))

    def fn():
        out = attention_update(layer, x, ctx)
        return tensor_sum(mul(out, Tensor(w)))
    assert_grads_match(fn, layer.parameters() + [x, ctx])


def test_full_model_gradients(rng):
    st = _stack(rng, c=4, s=2, m=5, heads=2, n_layers=2, k=3)
    feats = Parameter(rng.standard_normal((4, 4, 4)), "feats")
    ctx = ContextTokenSet(Parameter(rng.standard_normal((4, 5, 4)), "ctx"), 5, [])
    labels = rng.integers(0, 3, (4, 4))
    labels[0, 0] = 255

    def fn():
        logits, aux = cfm.forward(st, feats, ctx, 2)
        return cfm.loss(logits, labels, aux)
    assert_grads_match(fn, st.parameters() + [feats, ctx.tokens])


def test_context_receives_no_update(rng):
    st = _stack(rng)
    ctx_np = rng.standard_normal((4, 5, 4))
    ctx = ContextTokenSet(Tensor(ctx_np.copy()), 5, [])
    logits, aux = cfm.forward(st, Tensor(rng.standard_normal((4, 4, 4))), ctx, 2)
    backward(cfm.loss(logits, rng.integers(0, 3, (4, 4)), aux))
    assert np.array_equal(ctx.tokens.data, ctx_np)
    with no_grad():
        again, _ = cfm.forward(st, Tensor(np.zeros((4, 4, 4))), ctx, 2)
    assert np.array_equal(ctx.tokens.data, ctx_np)
