"""
Wall clock
==========

Windowed context attention against joint attention over all four frames.
A reduced size keeps this quick; ``cffm bench`` runs the full 64x64 setting.
"""

from cffm.cffa import ContextSchedule
from cffm.harness.bench import BenchConfig, bench

cfg = BenchConfig(h=32, w=32, c=32, reps=3,
                  schedule=ContextSchedule([(3, 32, 8), (2, 16, 4), (1, 16, 2), (0, 8, 1)], s=8))
out = bench(cfg)
print(f"windowed {out['cffm_median'] * 1e3:.1f} ms, joint {out['baseline_median'] * 1e3:.1f} ms")
print(f"speedup {out['speedup']:.1f}x, pair ratio {out['pair_ratio']:.1f}")
