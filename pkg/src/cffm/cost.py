"""Exact multiply counts for windowed context attention and the joint baseline.

Cost means scalar multiplies issued by matrix products (adds, exp and
normalisation are not counted). The closed forms, per attention layer:

* scores       h*w*m*c     (each of the h*w queries meets its window's m tokens)
* aggregation  h*w*m*c
* Q projection h*w*c^2
* K, V         2*(h*w/s^2)*m*c^2  (every window projects its own m tokens)

plus context assembling, one (c*p^2 -> c) FC per schedule entry over a
(h/p) x (w/p) grid: n_entries*h*w*c^2 in total, independent of p.

The joint baseline over T = (l+1)*h*w tokens costs 2*T^2*c + 3*T*c^2 per layer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .baseline import SelfAttentionLayer, joint_forward
from .cffa import ContextSchedule, assemble_context, init_pool_params, partition_windows
from .cfm import CFMStack, mine
from .errors import ContractError
from .tensor import Rng, Tensor, count_multiplies, no_grad


@dataclass(frozen=True)
class CostModel:
    h: int
    w: int
    c: int
    l: int  # reference frame count
    m: int
    N: int = 1
    H: int = 1
    s: int = 1
    n_entries: int | None = None  # schedule entries; defaults to l + 1

    def __post_init__(self):
        for name in ("h", "w", "c", "m", "H", "s"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.l < 0 or self.N < 0:
            raise ContractError("l and N must be >= 0")

    @property
    def entries(self) -> int:
        return self.l + 1 if self.n_entries is None else self.n_entries

    @classmethod
    def from_schedule(cls, schedule: ContextSchedule, h: int, w: int, c: int,
                      N: int = 1, H: int = 1) -> "CostModel":
        return cls(h, w, c, len(schedule.reference_offsets), schedule.m, N, H, schedule.s,
                   len(schedule.entries))


@dataclass
class CostReport:
    kind: str
    score_pairs: int  # query-key pairs per layer
    analytic_multiplies: int
    breakdown: dict = field(default_factory=dict)
    measured_multiplies: int | None = None
    measured_breakdown: dict = field(default_factory=dict)
    baseline_tokens: int = 0
    baseline_score_pairs: int = 0
    baseline_multiplies: int = 0
    measured_baseline_multiplies: int | None = None
    token_product: int = 0  # (l+1)^2 * h * w
    pair_ratio: float = 1.0
    multiply_ratio: float = 1.0
    asymptotic: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        ok = self.measured_multiplies in (None, self.analytic_multiplies)
        return ok and self.measured_baseline_multiplies in (None, self.baseline_multiplies)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["consistent"] = self.consistent
        return d


def _baseline_terms(model: CostModel):
    t = (model.l + 1) * model.h * model.w
    pairs = t * t
    per_layer = 2 * pairs * model.c + 3 * t * model.c ** 2
    return t, pairs, model.N * per_layer


def cffm_cost(model: CostModel) -> CostReport:
    hw, m, c, N = model.h * model.w, model.m, model.c, model.N
    if hw % (model.s ** 2):
        raise ContractError(f"s={model.s} does not tile {model.h}x{model.w}")
    windows = hw // model.s ** 2
    breakdown = {
        "assembly": model.entries * hw * c * c,
        "q_projection": N * hw * c * c,
        "kv_projection": N * 2 * windows * m * c * c,
        "scores": N * hw * m * c,
        "aggregation": N * hw * m * c,
    }
    breakdown["mining"] = sum(v for k, v in breakdown.items() if k != "assembly")
    total = breakdown["assembly"] + breakdown["mining"]
    t, bpairs, bmul = _baseline_terms(model)
    return CostReport(
        kind="cffm",
        score_pairs=hw * m,
        analytic_multiplies=total,
        breakdown=breakdown,
        baseline_tokens=t,
        baseline_score_pairs=bpairs,
        baseline_multiplies=bmul,
        token_product=(model.l + 1) ** 2 * hw,
        pair_ratio=bpairs / (hw * m),
        multiply_ratio=bmul / total if total else float("inf"),
        asymptotic={"hwmc": hw * m * c, "hwc^2": hw * c * c, "mc^2": m * c * c,
                    "(l+1)hwc": (model.l + 1) * hw * c},
    )


def baseline_cost(model: CostModel) -> CostReport:
    t, pairs, mul = _baseline_terms(model)
    hw, c = model.h * model.w, model.c
    return CostReport(
        kind="baseline",
        score_pairs=pairs,
        analytic_multiplies=mul,
        breakdown={"qkv_projection": model.N * 3 * t * c * c,
                   "scores": model.N * pairs * c, "aggregation": model.N * pairs * c},
        baseline_tokens=t,
        baseline_score_pairs=pairs,
        baseline_multiplies=mul,
        token_product=(model.l + 1) ** 2 * hw,
        asymptotic={"(l+1)^2h^2w^2c": pairs * c, "(l+1)hwc^2": t * c * c},
    )


def measured_cost(schedule: ContextSchedule, h: int, w: int, c: int, n_layers: int = 1,
                  heads: int = 1, baseline: bool = True, seed: int = 0,
                  dtype=np.float64) -> CostReport:
    """Run one forward pass under the multiply tally and attach the counts.

    Measured values sit next to the closed-form ones in the returned report;
    ``report.consistent`` is True only if they agree exactly.
    """
    model = CostModel.from_schedule(schedule, h, w, c, n_layers, heads)
    report = cffm_cost(model)
    rng = Rng(seed)
    frames = {k: Tensor(rng.normal((h, w, c), dtype=dtype)) for k in schedule.offsets}
    pool = init_pool_params(schedule, c, rng, dtype)
    stack = CFMStack.init(rng, c, schedule.s, schedule.m, heads, n_layers, 2, dtype)
    with no_grad(), count_multiplies() as asm:
        ctx = assemble_context(frames, schedule, pool)
    windows = partition_windows(frames[0], schedule.s)
    with no_grad(), count_multiplies() as mining:
        mine(stack, windows, ctx)
    report.measured_breakdown = {"assembly": asm.count, "mining": mining.count}
    report.measured_multiplies = asm.count + mining.count
    if baseline:
        layers = [SelfAttentionLayer.init(rng, c, heads, dtype, name=f"full{i}")
                  for i in range(n_layers)]
        ordered = [frames[k] for k in schedule.offsets]
        with no_grad(), count_multiplies() as base:
            joint_forward(layers, ordered)
        report.measured_baseline_multiplies = base.count
    return report
