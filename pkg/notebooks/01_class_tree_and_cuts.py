"""
Class trees and cuts
====================

A dataset labels its nuclei with some antichain of the class tree. Here we
look at the bundled tree, build a few cuts and project a leaf-level
distribution onto each of them.
"""

import numpy as np

from hierseg import bundled_tree, leaf_cut, project_distribution, validate_cut
from hierseg.hierarchy import HierarchyError, project_label

tree = bundled_tree()
print("leaves, in canonical order:")
for j, name in enumerate(tree.leaf_names):
    print(f"  {j:2d} {name}")

# three label vocabularies from one tree
cuts = {
    "coarse": validate_cut(tree, ["epithelial", "inflammatory", "connective", "dead"]),
    "fine": leaf_cut(tree),
    "mixed": validate_cut(tree, ["epithelial", "lymphocyte", "macrophage", "neutrophil", "plasma", "connective"]),
}

rng = np.random.default_rng(0)
leaf_probs = rng.dirichlet(np.ones(tree.n_leaves))
for label, cut in cuts.items():
    mass = project_distribution(tree, cut, leaf_probs)
    print(f"\n{label} cut ({cut.m} members), covered mass {mass.sum():.3f}")
    for name, p in zip(cut.names, mass):
        print(f"  {name:22s} {p:.3f}")

# the mixed cut leaves "dead" uncovered
print("\nnecrotic under the mixed cut ->", project_label(tree, cuts["mixed"], "necrotic"))

try:
    validate_cut(tree, ["inflammatory", "plasma"])
except HierarchyError as exc:
    print("rejected:", exc)
