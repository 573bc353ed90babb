"""
Panoptic quality
================

Matching instances at IoU > 0.5 within a class, then
PQ = sum IoU / (TP + FP/2 + FN/2). The 8x8 example by hand.
"""

import numpy as np

from hierseg.metrics import MaskPair, match_instances, panoptic_quality

truth_i, truth_c = np.zeros((8, 8), int), np.zeros((8, 8), int)
truth_i[0:2, 0:5], truth_c[0:2, 0:5] = 1, 1  # g1, 10 pixels
truth_i[5:7, 5:8], truth_c[5:7, 5:8] = 2, 1  # g2, 6 pixels

pred_i, pred_c = np.zeros((8, 8), int), np.zeros((8, 8), int)
pred_i[0:2, 0:3], pred_c[0:2, 0:3] = 1, 1  # p1 covers 6 of g1's pixels
pred_i[3:5, 0:2], pred_c[3:5, 0:2] = 3, 1  # p3 hits nothing

truth, pred = MaskPair(truth_i, truth_c), MaskPair(pred_i, pred_c)
m = match_instances(pred, truth)
print("TP", m.tp, "FP", m.fp, "FN", m.fn)
report = panoptic_quality(pred, truth)
print("PQ", report.per_class[0].pq, "(0.6 / (1 + 0.5 + 0.5))")

# a pair at exactly IoU 0.5 is not a match
half_t = MaskPair(np.array([[1, 1, 0, 0]]), np.array([[1, 1, 0, 0]]))
half_p = MaskPair(np.array([[1, 1, 1, 1]]), np.array([[1, 1, 1, 1]]))
print("IoU 0.5 ->", panoptic_quality(half_p, half_t).per_class[0])
