"""
Training and streaming on synthetic video
=========================================

Squares slide over a two-region background. A small model learns to label
them and then runs over a new clip frame by frame, encoding each frame once.
Takes about half a minute.
"""

import logging

from cffm.harness.config import RunConfig, SynthClipSpec
from cffm.harness.stream import predict_masks
from cffm.harness.synth import gen_clip
from cffm.harness.train import train_toy
from cffm.metrics import evaluate

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = RunConfig(lr=3e-3, iterations=150, eval_every=50, data={"clips": 4})
result = train_toy(cfg)
print("train mIoU", round(result.report.miou, 4))

frames, masks = gen_clip(SynthClipSpec(frames=16, velocity=(1, 1), seed=123))
model = result.model
calls = model.encode_calls
pred = predict_masks(frames, model)
print("encoder calls for 16 frames:", model.encode_calls - calls)
report = evaluate([(masks, pred)], cfg.n_classes, (8, 16))
print("held-out mIoU", round(report.miou, 4), "mVC_8", round(report.mvc[8], 4),
      "mVC_16", round(report.mvc[16], 4))
