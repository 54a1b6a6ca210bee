"""Wall-clock comparison of windowed context attention against joint full self-attention."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..baseline import SelfAttentionLayer, joint_forward
from ..cffa import ContextSchedule, ScheduleEntry, assemble_context, init_pool_params, partition_windows
from ..cfm import CFMStack, mine
from ..cost import CostModel, baseline_cost, cffm_cost
from ..tensor import Rng, Tensor, count_multiplies, no_grad


def bench_schedule() -> ContextSchedule:
    """Four frames (offsets 3..0), 8x8 windows, m = 64 * 4 = 256."""
    return ContextSchedule([ScheduleEntry(3, 64, 8), ScheduleEntry(2, 32, 4),
                            ScheduleEntry(1, 16, 2), ScheduleEntry(0, 8, 1)], s=8)


@dataclass
class BenchConfig:
    h: int = 64
    w: int = 64
    c: int = 32
    heads: int = 2
    N: int = 2
    reps: int = 10
    threads: int = 1
    precision: str = "float32"
    seed: int = 0
    chunk: int = 512
    schedule: ContextSchedule = field(default_factory=bench_schedule)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        kw = {k: d[k] for k in ("h", "w", "c", "heads", "N", "reps", "threads", "precision",
                                 "seed", "chunk") if k in d}
        if "schedule" in d:
            kw["schedule"] = ContextSchedule.from_dict(d["schedule"])
        return cls(**kw)


def _timed(fn, reps: int):
    times = []
    with count_multiplies() as tally:
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    for _ in range(reps - 1):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return times, tally.count


def bench(config: BenchConfig | None = None) -> dict:
    """Median forward times for both methods plus analytic and measured multiply counts."""
    cfg = config or BenchConfig()
    dt = np.dtype(cfg.precision)
    sched = cfg.schedule
    rng = Rng(cfg.seed)
    frames = {k: Tensor(rng.normal((cfg.h, cfg.w, cfg.c), dtype=dt)) for k in sched.offsets}
    pool = init_pool_params(sched, cfg.c, rng, dt)
    stack = CFMStack.init(rng, cfg.c, sched.s, sched.m, cfg.heads, cfg.N, 2, dt)
    layers = [SelfAttentionLayer.from_layer(l) for l in stack.layers]
    ordered = [frames[k] for k in sched.offsets]

    def windowed():
        ctx = assemble_context(frames, sched, pool)
        mine(stack, partition_windows(frames[0], sched.s), ctx)

    def joint():
        joint_forward(layers, ordered, cfg.chunk)

    with threadpool_limits(limits=cfg.threads), no_grad():
        t_cffm, n_cffm = _timed(windowed, cfg.reps)
        t_base, n_base = _timed(joint, cfg.reps)

    model = CostModel.from_schedule(sched, cfg.h, cfg.w, cfg.c, cfg.N, cfg.heads)
    cost = cffm_cost(model)
    cost.measured_multiplies = n_cffm
    base = baseline_cost(model)
    base.measured_multiplies = n_base
    return {
        "config": {"h": cfg.h, "w": cfg.w, "c": cfg.c, "heads": cfg.heads, "N": cfg.N,
                   "reps": cfg.reps, "threads": cfg.threads, "precision": cfg.precision,
                   "schedule": sched.to_dict()},
        "cffm_seconds": t_cffm,
        "baseline_seconds": t_base,
        "cffm_median": statistics.median(t_cffm),
        "baseline_median": statistics.median(t_base),
        "speedup": statistics.median(t_base) / statistics.median(t_cffm),
        "pair_ratio": cost.pair_ratio,
        "cffm_cost": cost.to_dict(),
        "baseline_cost": base.to_dict(),
    }
