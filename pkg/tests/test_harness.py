import json

import numpy as np
import pytest

import cffm.tensor
from cffm.cffa import ContextSchedule
from cffm.errors import ContractError, DimensionError, NumericError
from cffm.harness.bench import BenchConfig, bench
from cffm.harness.checkpoint import load_checkpoint, save_checkpoint
from cffm.harness.config import RunConfig, SynthClipSpec, single_frame_schedule, toy_schedule
from cffm.harness.gradcheck import gradcheck
from cffm.harness.model import ToyModel, frame_indices, pad_amounts, toy_encode
from cffm.harness.stream import FeatureCache, predict_masks, recompute_segment, stream_segment
from cffm.harness.synth import gen_clip
from cffm.harness.train import Adam, train_toy
from cffm.tensor import Parameter, Rng, no_grad


def trained_ish_model(seed=0, **kw):
    """A model with larger random weights so logits actually vary."""
    model = ToyModel.init(RunConfig(seed=seed, **kw))
    rng = Rng(seed + 1)
    for p in model.parameters():
        p.data = rng.normal(p.shape, 0.2, dtype=p.dtype)
    return model


# ------------------------------------------------------------------ synthetic clips

def test_static_clip_is_constant():
    frames, masks = gen_clip(SynthClipSpec(frames=5, velocity=(0, 0), seed=3))
    assert frames.shape == (5, 48, 48, 3) and frames.dtype == np.float32
    assert all(np.array_equal(frames[0], f) for f in frames)
    assert all(np.array_equal(masks.frames[0], m) for m in masks.frames)


def test_object_advances_one_column_per_frame():
    spec = SynthClipSpec(frames=6, n_objects=1, velocity=(1, 0), seed=1)
    _, masks = gen_clip(spec)
    cols = []
    for m in masks.frames:
        ys, xs = np.nonzero(m == 2)
        assert len(xs) == spec.object_size ** 2
        cols.append(xs.mean())
    assert np.array_equal(np.diff(cols), np.ones(5))


def test_gen_clip_deterministic_and_seeded():
    a = gen_clip(SynthClipSpec(seed=7))
    b = gen_clip(SynthClipSpec(seed=7))
    c = gen_clip(SynthClipSpec(seed=8))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].frames, b[1].frames)
    assert not np.array_equal(a[0], c[0])


def test_gen_clip_errors():
    with pytest.raises(ContractError):
        gen_clip(SynthClipSpec(height=8, width=8, object_size=12))
    with pytest.raises(ContractError):
        gen_clip(SynthClipSpec(frames=40, width=20, object_size=12, velocity=(2, 0)))


# ------------------------------------------------------------------ model plumbing

def test_toy_encode_shape_and_divisibility():
    model = ToyModel.init(RunConfig())
    f = toy_encode(np.zeros((16, 24, 3)), model.embed_w, model.embed_b, model.mix_w,
                   model.mix_b, 4)
    assert f.shape == (4, 6, 16)
    with pytest.raises(DimensionError):
        toy_encode(np.zeros((10, 12, 3)), model.embed_w, model.embed_b, model.mix_w,
                   model.mix_b, 4)


def test_toy_encode_zero_mixing_is_patch_embedding(rng):
    c, p = 3, 2
    w = Parameter(rng.standard_normal((3 * p * p, c)))
    b = Parameter(rng.standard_normal(c))
    mix_w, mix_b = Parameter(np.zeros((9 * c, c))), Parameter(np.zeros(c))
    img = rng.standard_normal((4, 6, 3))
    out = toy_encode(img, w, b, mix_w, mix_b, p).data
    want = img.reshape(2, 2, 3, 2, 3).transpose(0, 2, 1, 3, 4).reshape(2, 3, 12) @ w.data + b.data
    np.testing.assert_allclose(out, want, atol=1e-13)


@pytest.mark.parametrize("hw", [(48, 48), (50, 46), (37, 61)])
def test_padding_round_trip(hw):
    model = trained_ish_model()
    t, b, l, r = pad_amounts(*hw, model.multiple)
    assert (hw[0] + t + b) % model.multiple == 0 and (hw[1] + l + r) % model.multiple == 0
    frames = np.random.default_rng(0).random((10,) + hw + (3,)).astype(np.float32)
    masks = predict_masks(frames, model)
    assert masks.shape == (10,) + hw


def test_frame_indices_clamp():
    assert frame_indices(4, [9, 6, 3]) == {9: 0, 6: 0, 3: 1, 0: 4}
    assert frame_indices(20, [9, 6, 3]) == {9: 11, 6: 14, 3: 17, 0: 20}


# ------------------------------------------------------------------ streaming

def test_stream_equals_recompute_bit_exact():
    model = trained_ish_model()
    frames, _ = gen_clip(SynthClipSpec(frames=16, seed=5))
    with no_grad():
        streamed = stream_segment(frames, model)
        assert model.encode_calls == 16
        for t in range(16):
            again = recompute_segment(frames, model, t)
            assert np.array_equal(streamed[t].data, again.data), t


def test_stream_static_clip_constant_after_warmup():
    model = trained_ish_model()
    frames, _ = gen_clip(SynthClipSpec(frames=14, velocity=(0, 0)))
    with no_grad():
        out = stream_segment(frames, model)
    for t in range(10, 14):
        assert np.array_equal(out[t].data, out[9].data)


def test_stream_rejects_short_clip():
    model = ToyModel.init(RunConfig())
    frames, _ = gen_clip(SynthClipSpec(frames=9))
    with pytest.raises(ContractError):
        stream_segment(frames, model)


def test_feature_cache_ring():
    cache = FeatureCache(3)
    for i in range(5):
        cache.put(i, i * 10)
    assert len(cache) == 3 and cache.earliest == 2
    assert 1 not in cache and cache.get(4) == 40
    with pytest.raises(ContractError):
        FeatureCache(0)


# ------------------------------------------------------------------ training

def _small_config(**kw):
    base = dict(iterations=40, eval_every=0, data={"clips": 1, "frames": 12})
    base.update(kw)
    return RunConfig(**base)


def test_training_reduces_loss():
    result = train_toy(_small_config(aux_weight=0.0, lr=3e-3, iterations=50), vc_ns=())
    first, last = np.mean(result.losses[:5]), np.mean(result.losses[-5:])
    assert last < first


def test_zero_learning_rate_changes_nothing():
    cfg = _small_config(lr=0.0, iterations=3)
    before = [p.data.copy() for p in ToyModel.init(cfg, Rng(cfg.seed)).parameters()]
    result = train_toy(cfg, vc_ns=())
    after = [p.data for p in result.model.parameters()]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_training_is_deterministic(tmp_path):
    cfg = _small_config(iterations=4, eval_every=2)
    a, b = train_toy(cfg), train_toy(cfg)
    assert a.losses == b.losses
    assert a.to_dict() == b.to_dict()
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(p.data, q.data)


def test_training_reports_nan_with_iteration():
    cfg = _small_config(iterations=2)
    clips = [gen_clip(s) for s in cfg.clip_specs()]
    clips[0][0][:] = np.nan
    with pytest.raises(NumericError, match="iteration 1"):
        train_toy(cfg, clips)


def test_adam_first_step_is_lr_sign():
    p = Parameter(np.array([1.0, -2.0, 0.5]))
    p.grad = np.array([3.0, -0.1, 0.0])
    Adam([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 0.5], atol=1e-6)


def test_run_config_json_round_trip(tmp_path):
    cfg = RunConfig(lr=3e-3, data={"clips": 2})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ContractError):
        RunConfig(c=15, heads=2)
    with pytest.raises(ContractError):
        RunConfig(precision="float16")
    specs = RunConfig(data={"clips": 3, "seed": 2}).clip_specs()
    assert [s.seed for s in specs] == [2000, 2001, 2002]
    assert len({s.velocity for s in specs}) == 3


def test_single_frame_schedule():
    sched = single_frame_schedule(toy_schedule())
    assert sched.reference_offsets == [] and sched.m == 16 + 16
    model = trained_ish_model(schedule=sched)
    frames, _ = gen_clip(SynthClipSpec(frames=3))
    assert predict_masks(frames, model).shape == (3, 48, 48)


# ------------------------------------------------------------------ checkpoints

def test_checkpoint_round_trip(tmp_path):
    model = trained_ish_model()
    save_checkpoint(model, tmp_path / "ck")
    loaded = load_checkpoint(tmp_path / "ck")
    for p, q in zip(model.parameters(), loaded.parameters()):
        assert p.name == q.name and np.array_equal(p.data, q.data)
    frames, _ = gen_clip(SynthClipSpec(frames=10))
    assert np.array_equal(predict_masks(frames, model), predict_masks(frames, loaded))


def test_checkpoint_shape_mismatch(tmp_path):
    model = ToyModel.init(RunConfig())
    save_checkpoint(model, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["config"]["c"] = 8
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path)


# ------------------------------------------------------------------ gradcheck and bench

def test_gradcheck_bias_table_only():
    report = gradcheck(only="bias_table")
    assert set(report.errors) == {"layer0.bias_table", "layer1.bias_table"}
    assert report.passed, report.errors


def test_gradcheck_catches_corrupted_backward(monkeypatch):
    original = cffm.tensor._gelu_grad
    monkeypatch.setattr(cffm.tensor, "_gelu_grad", lambda x: 1.1 * original(x))
    report = gradcheck(only="head")
    assert not report.passed
    assert "head.hidden.w" in report.failing()
    assert "head.cls.w" not in report.failing()


def test_bench_smoke():
    cfg = BenchConfig(h=16, w=16, c=8, reps=1,
                      schedule=ContextSchedule([(1, 8, 2), (0, 4, 1)], s=4))
    out = json.loads(json.dumps(bench(cfg)))
    assert len(out["cffm_seconds"]) == len(out["baseline_seconds"]) == 1
    assert out["cffm_cost"]["consistent"] and out["baseline_cost"]["consistent"]
    assert out["pair_ratio"] == (2 * 256) ** 2 / (256 * 32)
