"""
Losses on a cut
===============

Cross entropy and focal Tversky, evaluated on summed leaf probabilities.
We check the worked pixel, the sub-class invariance and the gradient
against central differences.
"""

import numpy as np

from hierseg import TargetField, TverskyParams, parse_hierarchy, validate_cut
from hierseg.losses import finite_diff_check, mce_loss, mft_loss, softmax

tree = parse_hierarchy('{"name": "root", "children": [{"name": "K", "children": [{"name": "a"}, {"name": "b"}]}, {"name": "c"}]}')
cut = validate_cut(tree, ["K", "c"])
target = TargetField([0], cut)

y = np.array([[0.3, 0.2, 0.4, 0.1]])  # a, b, c, background
exact = TverskyParams(epsilon=0.0)
print("MCE", mce_loss(y, target, tree)[0], " expected", -np.log(0.5))
print("MFT", mft_loss(y, target, tree, exact)[0],
      " expected", (1 - 0.5 / (0.7 + 0.3 * 0.9)) ** (4 / 3))

# moving mass between a and b does nothing
shuffled = np.array([[0.05, 0.45, 0.4, 0.1]])
print("after moving mass inside K:", mce_loss(shuffled, target, tree)[0], mft_loss(shuffled, target, tree, exact)[0])

# the gradient before the softmax is shared by a and b
_, g = mce_loss(y, target, tree, wrt="probs")
print("dL/dy for a, b, c, bg:", g[0])

rng = np.random.default_rng(1)
scores = rng.normal(size=(20, 4))
labels = TargetField(rng.integers(-2, 2, size=20), cut)
for name in ("mce", "mft", "combined"):
    print(f"{name:9s} finite-difference error {finite_diff_check(name, scores, labels, tree):.2e}")
