#!/usr/bin/env python3
# The evaluation metrics on hand-checkable inputs.

import numpy as np

from mlclab import (
    alignment,
    hamming,
    macro_f1,
    mean_average_precision,
    micro_f1,
    uniformity,
)

truth = np.array([
    [1, 1, 0],
    [1, 0, 0],
    [0, 1, 1],
])
pred = np.array([
    [1, 0, 1],
    [1, 0, 0],
    [0, 1, 1],
])

print(f"micro-F1 : {micro_f1(pred, truth):.4f}")
print(f"macro-F1 : {macro_f1(pred, truth):.4f}  (empty labels score 0, strict convention)")
print(f"hamming  : {hamming(pred, truth):.4f}  (x1000 = {1000*hamming(pred, truth):.1f})")

# ranking quality: one label, positives ranked 1st and 3rd -> AP = (1 + 2/3)/2
scores = np.array([[0.9], [0.5], [0.1]])
t = np.array([[1], [0], [1]])
print(f"mAP      : {mean_average_precision(scores, t):.4f}  (expected {5/6:.4f})")

# representation metrics on unit vectors; both are closed-form here
orth = np.array([[1.0, 0.0], [0.0, 1.0]])
anti = np.array([[1.0, 0.0], [-1.0, 0.0]])
same_labels = np.ones((2, 1), dtype=np.int8)
print(f"alignment, orthogonal pair : {alignment(orth, same_labels):.4f}  (expected 2)")
print(f"alignment, antipodal pair  : {alignment(anti, same_labels):.4f}  (expected 4)")
print(f"uniformity, orthogonal pair: {uniformity(orth):.4f}  (expected -4)")
print(f"uniformity, antipodal pair : {uniformity(anti):.4f}  (expected -8)")
