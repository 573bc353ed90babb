"""Hierarchy-aware nucleus segmentation on class trees with partial labels."""

from .hierarchy import (
    ClassTree,
    HierarchyError,
    LabelSet,
    bundled_tree,
    leaf_cut,
    load_hierarchy,
    parse_hierarchy,
    project_distribution,
    validate_cut,
)
from .losses import BACKGROUND, IGNORE, CombinedLossParams, TargetField, TverskyParams

__version__ = "0.1.0"
