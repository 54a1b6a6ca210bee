"""``cffm`` command line: gen, train-toy, stream, gradcheck, bench, cost, eval-vc.

Reports go to stdout as JSON; tensors and masks are CFT1 files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cft
from .cffa import ContextSchedule
from .cost import CostModel, baseline_cost, cffm_cost, measured_cost
from .harness.bench import BenchConfig, bench
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.config import RunConfig, SynthClipSpec, load_json
from .harness.gradcheck import gradcheck
from .harness.stream import predict_masks
from .harness.synth import gen_clip
from .harness.train import train_toy
from .metrics import evaluate


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def write_clip(directory, frames, masks, spec: SynthClipSpec | None = None):
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(parents=True, exist_ok=True)
    for t, (img, mask) in enumerate(zip(frames, masks.frames)):
        cft.save(d / "frames" / f"{t:04d}.cft", img.astype(np.float32))
        cft.save(d / "masks" / f"{t:04d}.cft", mask.astype(np.uint8))
    if spec is not None:
        (d / "clip.json").write_text(json.dumps(spec.to_dict(), indent=2))


def read_stack(directory) -> np.ndarray:
    files = sorted(Path(directory).glob("*.cft"))
    if not files:
        raise SystemExit(f"no .cft files in {directory}")
    return np.stack([cft.load(f) for f in files])


def cmd_gen(args):
    d = load_json(args.config).get("data", {})
    if args.seed is not None:
        d["seed"] = args.seed
    for key in ("frames", "height", "width", "n_classes", "n_objects", "noise", "object_size"):
        val = getattr(args, key)
        if val is not None:
            d[key] = val
    if args.velocity:
        d["velocity"] = [int(v) for v in args.velocity.split(",")]
    spec = SynthClipSpec.from_dict(d)
    frames, masks = gen_clip(spec)
    write_clip(args.out, frames, masks, spec)
    _emit({"out": str(args.out), "frames": len(frames), "spec": spec.to_dict()})


def _run_config(args) -> RunConfig:
    d = load_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    return RunConfig.from_dict(d)


def cmd_train(args):
    cfg = _run_config(args)
    if args.iterations is not None:
        cfg.iterations = args.iterations
    result = train_toy(cfg)
    out = Path(args.out)
    save_checkpoint(result.model, out / "checkpoint")
    report = result.to_dict()
    (out / "report.json").write_text(json.dumps(report, indent=2, default=float))
    _emit(report)


def cmd_stream(args):
    model = load_checkpoint(args.checkpoint)
    frames = read_stack(Path(args.clip) / "frames")
    preds = predict_masks(frames, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, mask in enumerate(preds):
        cft.save(out / f"{t:04d}.cft", mask)
    _emit({"frames": len(preds), "encoder_calls": model.encode_calls, "out": str(out)})


def cmd_gradcheck(args):
    report = gradcheck(seed=args.seed or 0, only=args.only)
    _emit(report.to_dict())
    return 0 if report.passed else 1


def cmd_bench(args):
    d = load_json(args.config).get("bench", {})
    if args.reps is not None:
        d["reps"] = args.reps
    if args.threads is not None:
        d["threads"] = args.threads
    if args.seed is not None:
        d["seed"] = args.seed
    _emit(bench(BenchConfig.from_dict(d)))


def cmd_cost(args):
    d = load_json(args.config)
    sched = ContextSchedule.from_dict(d["schedule"]) if "schedule" in d else ContextSchedule.default()
    feats = d.get("features", {})
    h, w = int(feats.get("h", 56)), int(feats.get("w", 56))
    c = int(d.get("c", feats.get("c", 64)))
    n, heads = int(d.get("N", 2)), int(d.get("heads", 1))
    if args.measure:
        report = measured_cost(sched, h, w, c, n, heads, seed=args.seed or 0)
    else:
        report = cffm_cost(CostModel.from_schedule(sched, h, w, c, n, heads))
    base = baseline_cost(CostModel.from_schedule(sched, h, w, c, n, heads))
    _emit({"cffm": report.to_dict(), "baseline": base.to_dict()})
    return 0 if report.consistent else 1


def cmd_eval_vc(args):
    gt = read_stack(args.gt).astype(np.int64)
    pred = read_stack(args.pred).astype(np.int64)
    k = args.classes or int(max(gt[gt != args.ignore].max(initial=0), pred.max()) + 1)
    ns = [int(n) for n in args.n.split(",")]
    report = evaluate([(gt, pred)], k, ns, args.ignore, args.strict)
    _emit(report.to_dict())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cffm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", required=True, help="output directory")
        return p

    p = common(sub.add_parser("gen", help="write a synthetic clip"), out=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--n-objects", dest="n_objects", type=int)
    p.add_argument("--object-size", dest="object_size", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--velocity", help="vx,vy in pixels per frame")
    p.set_defaults(func=cmd_gen)

    p = common(sub.add_parser("train-toy", help="train on synthetic clips"), out=True)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("stream", help="segment a clip frame by frame"), out=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="directory written by `cffm gen`")
    p.set_defaults(func=cmd_stream)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    p.add_argument("--only", help="check parameters whose name contains this")
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("bench", help="time windowed vs joint attention"))
    p.add_argument("--reps", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("cost", help="analytic (and measured) multiply counts"))
    p.add_argument("--measure", action="store_true")
    p.set_defaults(func=cmd_cost)

    p = common(sub.add_parser("eval-vc", help="VC_n and IoU for one predicted clip"))
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--n", default="8,16")
    p.add_argument("--classes", type=int)
    p.add_argument("--ignore", type=int, default=255)
    p.add_argument("--strict", action="store_true", help="stable prediction must match GT")
    p.set_defaults(func=cmd_eval_vc)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
