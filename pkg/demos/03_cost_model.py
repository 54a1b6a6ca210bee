"""
Counting multiplies
===================

Closed-form counts next to counts measured while the code runs.
"""

from cffm.cffa import ContextSchedule
from cffm.cost import CostModel, baseline_cost, cffm_cost, measured_cost

# the four-frame example on 20x20 features
r = cffm_cost(CostModel(h=20, w=20, c=64, l=3, m=66, s=5))
print(f"query-key pairs: {r.score_pairs:,} windowed vs {r.baseline_score_pairs:,} joint")
print(f"ratio {r.pair_ratio:.2f}")

# the default schedule on 56x56 features
sched = ContextSchedule.default()
r = cffm_cost(CostModel.from_schedule(sched, 56, 56, 64, N=2))
b = baseline_cost(CostModel.from_schedule(sched, 56, 56, 64, N=2))
print(f"default: m={sched.m}, {r.analytic_multiplies:,} vs {b.analytic_multiplies:,} multiplies")
for name, v in r.breakdown.items():
    print(f"  {name:14s}{v:>16,}")

# instrumented run: p=3 does not tile 20x20, so use 24x24
small = ContextSchedule([(3, 20, 4), (2, 12, 3), (1, 6, 2), (0, 4, 1)], s=4)
m = measured_cost(small, 24, 24, c=4, n_layers=2, heads=2)
print("measured", m.measured_multiplies, "analytic", m.analytic_multiplies,
      "baseline", m.measured_baseline_multiplies, "consistent:", m.consistent)
