"""Toy end-to-end training on synthetic clips."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import cfm
from ..errors import NumericError
from ..metrics import MetricReport, evaluate
from ..tensor import Rng, add, backward, scale, zero_grad
from .config import RunConfig
from .model import ToyModel, frame_indices
from .stream import predict_masks
from .synth import gen_clip

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; state is per parameter, updates are in place."""

    def __init__(self, params, lr=6e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    model: ToyModel
    losses: list = field(default_factory=list)
    miou_history: list = field(default_factory=list)  # (iteration, train mIoU)
    report: MetricReport | None = None

    def to_dict(self) -> dict:
        return {"losses": self.losses, "miou_history": self.miou_history,
                "final": self.report.to_dict() if self.report else None}


def make_clips(config: RunConfig):
    return [gen_clip(spec) for spec in config.clip_specs()]


def sample_loss(model: ToyModel, frames, masks, t: int):
    idx = frame_indices(t, model.config.offsets)
    encoded = {i: model.encode(frames[i]) for i in sorted(set(idx.values()))}
    feats = {k: encoded[i] for k, i in idx.items()}
    logits, aux = model.segment(feats, frames[t].shape[:2])
    labels = masks.frames[t].astype(np.int64)
    return cfm.loss(logits, labels, aux, model.config.aux_weight, model.config.ignore_index)


def evaluate_model(model: ToyModel, clips, ns=(8,)) -> MetricReport:
    videos = [(masks, predict_masks(frames, model)) for frames, masks in clips]
    ns = [n for n in ns if all(len(m) >= n for m, _ in videos)]
    return evaluate(videos, model.config.n_classes, ns, model.config.ignore_index)


def train_toy(config: RunConfig, clips=None, iterations: int | None = None,
              vc_ns=(8,)) -> TrainResult:
    """Adam on mean CE (+ weighted auxiliary CE) over random (clip, frame) targets."""
    clips = make_clips(config) if clips is None else clips
    iterations = config.iterations if iterations is None else iterations
    rng = Rng(config.seed)
    model = ToyModel.init(config, rng)
    params = model.parameters()
    opt = Adam(params, config.lr, config.betas, config.eps)
    targets = [(ci, t) for ci, (frames, _) in enumerate(clips) for t in range(len(frames))]
    result = TrainResult(model)
    for it in range(1, iterations + 1):
        zero_grad(params)
        picks = rng.integers(0, len(targets), size=config.batch)
        total = None
        for j in picks:
            ci, t = targets[int(j)]
            frames, masks = clips[ci]
            try:
                l = sample_loss(model, frames, masks, t)
            except NumericError as exc:
                raise NumericError(f"iteration {it}: {exc}") from exc
            total = l if total is None else add(total, l)
        total = scale(total, 1.0 / config.batch)
        value = total.item()
        if not np.isfinite(value):
            raise NumericError(f"loss became {value} at iteration {it}")
        backward(total)
        opt.step()
        result.losses.append(value)
        if config.eval_every and (it % config.eval_every == 0 or it == iterations):
            miou = evaluate_model(model, clips, ()).miou
            result.miou_history.append((it, miou))
            log.info("iter %d loss %.4f train mIoU %.4f", it, value, miou)
    result.report = evaluate_model(model, clips, vc_ns)
    return result
