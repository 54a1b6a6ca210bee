"""
Building context tokens
=======================

Farther frames are pooled more coarsely, so a wide area costs few tokens.
"""

import numpy as np

from cffm.cffa import (ContextSchedule, PooledFrame, assemble_context, gather_context,
                       init_pool_params)
from cffm.tensor import Rng, Tensor

# A schedule lists (frame offset, receptive field r, pooling kernel p).
# Each entry contributes (r/p)^2 tokens to every window.
sched = ContextSchedule([(3, 20, 4), (2, 12, 3), (1, 6, 2), (0, 4, 1)], s=4)
for e in sched.entries:
    print(f"offset {e.offset}: r={e.r:2d} p={e.p} -> {e.tokens:2d} tokens")
print("tokens per window:", sched.m)

# Which pooled cells does one window see?  Label each cell of a 6x6
# pooled grid with its index and gather for window 4 of a 6x6 window grid.
cells = Tensor(np.arange(36.0).reshape(6, 6, 1))
frame = PooledFrame(cells, offset=3, p=4)
picked = gather_context(frame, 4, (6, 6), 4, 20).data[:, 0].astype(int)
print("window 4 reads cells:\n", picked.reshape(5, 5))

# Assembling all entries on random 24x24 features.
rng = Rng(0)
feats = {k: Tensor(rng.normal((24, 24, 8))) for k in sched.offsets}
ctx = assemble_context(feats, sched, init_pool_params(sched, 8, rng))
print("context tensor (windows, tokens, channels):", ctx.tokens.shape)
