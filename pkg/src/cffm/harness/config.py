"""Run configuration and its JSON form.

Example config (every key optional; defaults shown for the toy run)::

    {
      "schedule": {"s": 4, "entries": [{"offset": 9, "r": 12, "p": 4}, ...]},
      "N": 2, "heads": 2, "c": 16, "n_classes": 4, "aux_weight": 0.4,
      "patch": 4, "precision": "float64", "seed": 0,
      "optimizer": {"lr": 6e-4, "betas": [0.9, 0.999], "eps": 1e-8},
      "iterations": 300, "batch": 4, "eval_every": 50,
      "data": {"clips": 8, "frames": 12, "height": 48, "width": 48, ...},
      "features": {"h": 20, "w": 20}
    }
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..cffa import ContextSchedule, ScheduleEntry
from ..errors import ContractError


@dataclass
class SynthClipSpec:
    frames: int = 12
    height: int = 48
    width: int = 48
    n_classes: int = 4
    n_objects: int = 2
    velocity: tuple[int, int] = (1, 0)  # (columns, rows) per frame
    noise: float = 0.05
    seed: int = 0
    object_size: int = 12

    def __post_init__(self):
        self.velocity = tuple(int(v) for v in self.velocity)
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise ContractError("frames, height and width must be >= 1")
        if self.n_classes < 2:
            raise ContractError("need at least two classes")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthClipSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["velocity"] = list(self.velocity)
        return d


def toy_schedule() -> ContextSchedule:
    """Offsets {9, 6, 3} on 12x12 features with 4x4 windows; m = 61."""
    return ContextSchedule([ScheduleEntry(9, 12, 4), ScheduleEntry(6, 8, 2),
                            ScheduleEntry(3, 4, 2), ScheduleEntry(0, 4, 1),
                            ScheduleEntry(0, 12, 3)], s=4)


def single_frame_schedule(schedule: ContextSchedule) -> ContextSchedule:
    """Keep only the target's own entries (no reference frames)."""
    return ContextSchedule([e for e in schedule.entries if e.offset == 0], schedule.s)


@dataclass
class RunConfig:
    schedule: ContextSchedule = field(default_factory=toy_schedule)
    N: int = 2
    heads: int = 2
    c: int = 16
    n_classes: int = 4
    aux_weight: float = 0.4
    patch: int = 4
    precision: str = "float64"
    seed: int = 0
    lr: float = 6e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    iterations: int = 300
    batch: int = 4
    eval_every: int = 50
    ignore_index: int = 255
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        ks = self.schedule.reference_offsets
        if any(a <= b for a, b in zip(ks, ks[1:])):
            raise ContractError(f"reference offsets must strictly decrease, got {ks}")
        if self.N < 0 or self.heads < 1 or self.c % self.heads:
            raise ContractError("need N >= 0, heads >= 1 and heads | c")
        if self.precision not in ("float32", "float64"):
            raise ContractError(f"unknown precision {self.precision!r}")
        self.betas = tuple(self.betas)

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @property
    def offsets(self) -> list[int]:
        return self.schedule.reference_offsets

    def clip_specs(self) -> list[SynthClipSpec]:
        """Training clips described by ``data``; each clip gets its own seed and velocity."""
        d = dict(self.data)
        n = int(d.pop("clips", 8))
        base = SynthClipSpec.from_dict({"n_classes": self.n_classes, **d})
        velocities = d.get("velocities") or [(1, 0), (0, 1), (-1, 0), (0, -1),
                                             (1, 1), (-1, 1), (1, -1), (0, 0)]
        specs = []
        for i in range(n):
            s = SynthClipSpec.from_dict({**base.to_dict(), "seed": base.seed * 1000 + i,
                                         "velocity": velocities[i % len(velocities)]})
            specs.append(s)
        return specs

    def to_dict(self) -> dict:
        return {"schedule": self.schedule.to_dict(), "N": self.N, "heads": self.heads,
                "c": self.c, "n_classes": self.n_classes, "aux_weight": self.aux_weight,
                "patch": self.patch, "precision": self.precision, "seed": self.seed,
                "optimizer": {"lr": self.lr, "betas": list(self.betas), "eps": self.eps},
                "iterations": self.iterations, "batch": self.batch,
                "eval_every": self.eval_every, "ignore_index": self.ignore_index,
                "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kw = {}
        if "schedule" in d:
            kw["schedule"] = ContextSchedule.from_dict(d["schedule"])
        for key in ("N", "heads", "c", "n_classes", "aux_weight", "patch", "precision", "seed",
                    "iterations", "batch", "eval_every", "ignore_index", "data"):
            if key in d:
                kw[key] = d[key]
        opt = d.get("optimizer", {})
        for key in ("lr", "betas", "eps"):
            if key in opt:
                kw[key] = opt[key]
        return cls(**kw)


def load_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}
