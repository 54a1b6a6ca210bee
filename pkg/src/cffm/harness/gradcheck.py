"""Central finite-difference check of every parameter gradient in a small pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import cfm
from ..cffa import ContextSchedule, ScheduleEntry, assemble_context, init_pool_params
from ..tensor import Parameter, Rng, Tensor, backward


def small_schedule() -> ContextSchedule:
    # 8x8 features, 4x4 windows, m = 4 + 4 + 9 = 17
    return ContextSchedule([ScheduleEntry(2, 8, 4), ScheduleEntry(1, 4, 2),
                            ScheduleEntry(0, 3, 1)], s=4)


@dataclass
class GradcheckSetup:
    schedule: ContextSchedule
    features: dict
    labels: np.ndarray
    pool: list
    stack: cfm.CFMStack
    aux_weight: float = 0.4

    def parameters(self) -> list[Parameter]:
        return [t for pair in self.pool for t in pair] + self.stack.parameters()

    def loss(self) -> Tensor:
        ctx = assemble_context(self.features, self.schedule, self.pool)
        logits, aux = cfm.forward(self.stack, self.features[0], ctx, self.schedule.s)
        return cfm.loss(logits, self.labels, aux, self.aux_weight)


def build_setup(seed: int = 0, h: int = 8, w: int = 8, c: int = 8, heads: int = 2,
                n_layers: int = 2, n_classes: int = 3, schedule: ContextSchedule | None = None,
                init_std: float = 0.3) -> GradcheckSetup:
    """Random float64 pipeline; parameters drawn with ``init_std`` so every path is exercised."""
    schedule = schedule or small_schedule()
    rng = Rng(seed)
    feats = {k: Tensor(rng.normal((h, w, c))) for k in schedule.offsets}
    labels = rng.integers(0, n_classes, size=(h, w))
    pool = init_pool_params(schedule, c, rng)
    stack = cfm.CFMStack.init(rng, c, schedule.s, schedule.m, heads, n_layers, n_classes)
    setup = GradcheckSetup(schedule, feats, labels, pool, stack)
    for p in setup.parameters():
        p.data = rng.normal(p.shape, init_std)
    return setup


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)  # parameter name -> relative error
    tolerance: float = 1e-4
    eps: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def failing(self) -> list[str]:
        return [k for k, v in self.errors.items() if v > self.tolerance]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_relative_error": self.max_error,
                "worst_parameter": self.worst, "tolerance": self.tolerance, "eps": self.eps,
                "errors": self.errors}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    The floor keeps structurally zero gradients (e.g. the key bias, which
    shifts every score in a row equally) from scoring finite-difference noise
    as a 100% error.
    """
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(loss_fn, p: Parameter, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(p.data)
    flat, gflat = p.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn().item()
        flat[i] = old - eps
        down = loss_fn().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def check_gradients(loss_fn, params, eps: float = 1e-5, tolerance: float = 1e-4,
                    only: str | None = None) -> GradcheckReport:
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    report = GradcheckReport(tolerance=tolerance, eps=eps)
    for p in params:
        if only and only not in p.name:
            continue
        report.errors[p.name] = relative_error(p.grad, numeric_grad(loss_fn, p, eps))
    return report


def gradcheck(seed: int = 0, only: str | None = None, eps: float = 1e-5,
              tolerance: float = 1e-4, **setup_kw) -> GradcheckReport:
    """Finite differences over all parameters (or names containing ``only``)."""
    setup = build_setup(seed, **setup_kw)
    return check_gradients(setup.loss, setup.parameters(), eps, tolerance, only)
