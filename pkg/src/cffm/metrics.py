"""Video consistency and IoU metrics over integer label-mask sequences."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError

IGNORE = 255


@dataclass
class MaskSequence:
    frames: np.ndarray  # (C, h, w) integer labels
    n_classes: int
    ignore_index: int = IGNORE

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim == 2:
            self.frames = self.frames[None]
        if self.frames.ndim != 3:
            raise ContractError(f"mask sequence must be (C, h, w), got {self.frames.shape}")
        if self.frames.dtype.kind not in "iu":
            raise ContractError(f"labels must be integers, got {self.frames.dtype}")
        bad = (self.frames != self.ignore_index) & ((self.frames < 0) | (self.frames >= self.n_classes))
        if bad.any():
            raise ContractError(f"labels outside [0, {self.n_classes}) and not ignore")

    def __len__(self):
        return self.frames.shape[0]


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, MaskSequence) else np.asarray(x)


def _mean(vals) -> float:
    # plain left-to-right sum so results do not depend on numpy's reduction order
    return float(sum(vals) / len(vals))


def _stable(block: np.ndarray) -> np.ndarray:
    return (block == block[0]).all(axis=0)


def vc_window_scores(gt, pred, n: int, ignore_index: int = IGNORE, strict: bool = False):
    """Per-window |G & P| / |G|; None where the GT-stable set is empty."""
    g, p = _frames(gt), _frames(pred)
    if g.shape != p.shape:
        raise ContractError(f"gt {g.shape} and pred {p.shape} are not aligned")
    c = g.shape[0]
    if not 1 <= n <= c:
        raise ContractError(f"need 1 <= n <= C, got n={n}, C={c}")
    scores = []
    for i in range(c - n + 1):
        gb, pb = g[i:i + n], p[i:i + n]
        gs = _stable(gb) & (gb != ignore_index).all(axis=0)
        ps = _stable(pb)
        if strict:
            ps &= pb[0] == gb[0]
        denom = int(gs.sum())
        scores.append(None if denom == 0 else int((gs & ps).sum()) / denom)
    return scores


def vc_n(gt, pred, n: int, ignore_index: int = IGNORE, strict: bool = False) -> float | None:
    """Mean over n-frame windows of the fraction of GT-stable pixels whose prediction is stable.

    Windows with no GT-stable pixel are skipped; returns None if none remain.
    ``strict`` additionally requires the stable prediction to equal the GT label.
    """
    vals = [v for v in vc_window_scores(gt, pred, n, ignore_index, strict) if v is not None]
    return _mean(vals) if vals else None


def mvc(videos: Sequence[tuple], n: int, ignore_index: int = IGNORE, strict: bool = False) -> float:
    vals = [v for v in (vc_n(g, p, n, ignore_index, strict) for g, p in videos) if v is not None]
    if not vals:
        raise ContractError(f"VC_{n} is undefined for every video")
    return _mean(vals)


def confusion_matrix(gt, pred, n_classes: int, ignore_index: int = IGNORE) -> np.ndarray:
    """Rows are GT classes, columns predicted classes; ignore pixels dropped."""
    g = np.asarray(gt).reshape(-1).astype(np.int64)
    p = np.asarray(pred).reshape(-1).astype(np.int64)
    keep = g != ignore_index
    g, p = g[keep], p[keep]
    if g.size and (g.min() < 0 or g.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ContractError(f"labels outside [0, {n_classes})")
    return np.bincount(n_classes * g + p, minlength=n_classes ** 2).reshape(n_classes, n_classes)


@dataclass
class MetricReport:
    n_classes: int
    class_iou: list = field(default_factory=list)  # None for classes absent from GT and pred
    miou: float | None = None
    weighted_iou: float | None = None
    gt_pixels: list = field(default_factory=list)
    pred_pixels: list = field(default_factory=list)
    vc: dict = field(default_factory=dict)  # n -> per-video VC_n (None when undefined)
    mvc: dict = field(default_factory=dict)  # n -> mVC_n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vc"] = {str(k): v for k, v in self.vc.items()}
        d["mvc"] = {str(k): v for k, v in self.mvc.items()}
        return d


def iou_report(gt, pred, n_classes: int, ignore_index: int = IGNORE) -> MetricReport:
    cm = confusion_matrix(_frames(gt), _frames(pred), n_classes, ignore_index)
    tp = np.diag(cm).astype(float)
    gt_px = cm.sum(axis=1)
    pred_px = cm.sum(axis=0)
    union = gt_px + pred_px - tp
    ious = [None if union[k] == 0 else float(tp[k] / union[k]) for k in range(n_classes)]
    present = [k for k in range(n_classes) if gt_px[k] > 0]
    total = gt_px.sum()
    miou = _mean([ious[k] for k in present]) if present else None
    wiou = float(sum(gt_px[k] / total * ious[k] for k in present)) if total else None
    return MetricReport(n_classes, ious, miou, wiou, gt_px.tolist(), pred_px.tolist())


def evaluate(videos: Sequence[tuple], n_classes: int, ns: Sequence[int] = (8, 16),
             ignore_index: int = IGNORE, strict: bool = False) -> MetricReport:
    """IoU over all frames of all videos plus per-video VC_n and mVC_n for each n."""
    gts = np.concatenate([_frames(g) for g, _ in videos])
    preds = np.concatenate([_frames(p) for _, p in videos])
    report = iou_report(gts, preds, n_classes, ignore_index)
    for n in ns:
        per = []
        for g, p in videos:
            per.append(vc_n(g, p, n, ignore_index, strict) if len(_frames(g)) >= n else None)
        report.vc[n] = per
        defined = [v for v in per if v is not None]
        report.mvc[n] = _mean(defined) if defined else None
    return report
