"""
Consistency and IoU
===================
"""

import numpy as np

from cffm.metrics import iou_report, vc_n

# Two 2x2 frames. The GT is stable at three pixels and the prediction
# holds still at two of those, so VC_2 = 2/3.
gt = np.array([[[0, 0], [1, 1]], [[0, 0], [1, 0]]])
pred = np.array([[[0, 1], [1, 1]], [[0, 0], [1, 1]]])
print("VC_2 =", vc_n(gt, pred, 2))
print("VC_1 =", vc_n(gt, pred, 1))

# label-agnostic by default; strict also wants the stable label to be right
wrong = np.array([[[2, 1]], [[2, 1]]])
right = np.array([[[0, 1]], [[0, 1]]])
print("agnostic", vc_n(right, wrong, 2), "strict", vc_n(right, wrong, 2, strict=True))

# 4x4 frame, 12 px of class 0 and 4 of class 1, three mistakes
g = np.zeros((4, 4), int)
g[3] = 1
p = g.copy()
p[0, :2] = 1
p[3, 3] = 0
r = iou_report(g, p, 2)
print("per class", [round(v, 4) for v in r.class_iou], "mIoU", round(r.miou, 4),
      "weighted", round(r.weighted_iou, 4))
