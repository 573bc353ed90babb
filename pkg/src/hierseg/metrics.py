"""Instance matching and panoptic quality at a dataset's label cut.

Ground truth and predictions are both two-channel masks: an instance map
(0 = no instance) and a class map (0 = background, v = cut member v - 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .hierarchy import ClassTree, LabelSet, project_distribution

__all__ = [
    "MaskError",
    "MaskPair",
    "ClassPQ",
    "PQReport",
    "iou",
    "match_instances",
    "panoptic_quality",
    "aggregate_reports",
    "classify_instances",
    "label_instances",
    "write_report",
]

MATCH_THRESHOLD = 0.5


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPair:
    instance_map: np.ndarray
    class_map: np.ndarray

    def __post_init__(self):
        inst = np.asarray(self.instance_map)
        cls = np.asarray(self.class_map)
        object.__setattr__(self, "instance_map", inst.astype(np.int64, copy=False))
        object.__setattr__(self, "class_map", cls.astype(np.int64, copy=False))

    @property
    def shape(self):
        return self.instance_map.shape

    def validate(self) -> None:
        inst, cls = self.instance_map, self.class_map
        if inst.shape != cls.shape or inst.ndim != 2:
            raise MaskError(f"instance and class maps must be equal 2-D shapes, got {inst.shape} and {cls.shape}")
        if (inst < 0).any() or (cls < 0).any():
            raise MaskError("mask values must be nonnegative")
        on = inst > 0
        if (cls[on] == 0).any():
            raise MaskError("an instance pixel has background class")
        ids = inst[on]
        if ids.size:
            order = np.argsort(ids, kind="stable")
            ids_sorted, cls_sorted = ids[order], cls[on][order]
            starts = np.flatnonzero(np.r_[True, ids_sorted[1:] != ids_sorted[:-1]])
            lo = np.minimum.reduceat(cls_sorted, starts)
            hi = np.maximum.reduceat(cls_sorted, starts)
            mixed = ids_sorted[starts][lo != hi]
            if mixed.size:
                raise MaskError(f"instance {int(mixed[0])} spans several classes")

    def instances(self) -> dict[int, int]:
        """Instance id -> class value (1-based member index)."""
        on = self.instance_map > 0
        ids, first = np.unique(self.instance_map[on], return_index=True)
        classes = self.class_map[on][first]
        return {int(i): int(c) for i, c in zip(ids, classes)}


@dataclass
class ClassPQ:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ious: list = field(default_factory=list)

    @property
    def sum_iou(self) -> float:
        return math.fsum(self.ious)

    @property
    def pq(self) -> Optional[float]:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        if denom == 0:
            return None
        return self.sum_iou / denom


@dataclass
class PQReport:
    per_class: list[ClassPQ]

    @property
    def present(self) -> list[int]:
        """Members with at least one ground-truth instance."""
        return [k for k, c in enumerate(self.per_class) if c.tp + c.fn > 0]

    @property
    def mean_pq(self) -> Optional[float]:
        present = self.present
        if not present:
            return None
        return math.fsum(self.per_class[k].pq for k in present) / len(present)


def iou(a, b) -> float:
    """Intersection over union of two pixel sets (boolean masks or sets)."""
    if isinstance(a, (set, frozenset)) or isinstance(b, (set, frozenset)):
        a, b = set(a), set(b)
        if not a or not b:
            raise MaskError("instances must be non-empty")
        return len(a & b) / len(a | b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 or nb == 0:
        raise MaskError("instances must be non-empty")
    inter = int(np.logical_and(a, b).sum())
    return inter / (na + nb - inter)


@dataclass
class MatchResult:
    tp: dict[int, list[tuple[int, int, float]]]
    fp: dict[int, list[int]]
    fn: dict[int, list[int]]


def match_instances(pred: MaskPair, truth: MaskPair, threshold: float = MATCH_THRESHOLD) -> MatchResult:
    """Class-wise matching; a pair is a true positive when IoU > threshold.

    Keys of the result dictionaries are 1-based class values.
    """
    if threshold < 0.5:
        raise MaskError("threshold must be >= 0.5 for unique matching")
    pred.validate()
    truth.validate()
    if pred.shape != truth.shape:
        raise MaskError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")
    p_cls = pred.instances()
    g_cls = truth.instances()
    p_area = dict(zip(*np.unique(pred.instance_map[pred.instance_map > 0], return_counts=True)))
    g_area = dict(zip(*np.unique(truth.instance_map[truth.instance_map > 0], return_counts=True)))

    both = (pred.instance_map > 0) & (truth.instance_map > 0)
    pairs, inter = np.unique(
        np.stack([pred.instance_map[both], truth.instance_map[both]]), axis=1, return_counts=True
    )

    classes = sorted(set(p_cls.values()) | set(g_cls.values()))
    tp = {c: [] for c in classes}
    matched_p, matched_g = set(), set()
    for (pid, gid), n in zip(pairs.T.tolist(), inter.tolist()):
        if p_cls[pid] != g_cls[gid]:
            continue
        value = n / (int(p_area[pid]) + int(g_area[gid]) - n)
        if value > threshold:
            tp[g_cls[gid]].append((pid, gid, value))
            matched_p.add(pid)
            matched_g.add(gid)
    for c in classes:
        tp[c].sort(key=lambda t: t[1])
    fp = {c: sorted(p for p, pc in p_cls.items() if pc == c and p not in matched_p) for c in classes}
    fn = {c: sorted(g for g, gc in g_cls.items() if gc == c and g not in matched_g) for c in classes}
    return MatchResult(tp=tp, fp=fp, fn=fn)


def panoptic_quality(pred: MaskPair, truth: MaskPair, n_classes: Optional[int] = None,
                     threshold: float = MATCH_THRESHOLD) -> PQReport:
    result = match_instances(pred, truth, threshold)
    if n_classes is None:
        n_classes = int(max(pred.class_map.max(initial=0), truth.class_map.max(initial=0)))
    per_class = [ClassPQ() for _ in range(n_classes)]
    for c in result.tp:
        if c > n_classes:
            raise MaskError(f"class value {c} exceeds the {n_classes} cut members")
        entry = per_class[c - 1]
        entry.tp = len(result.tp[c])
        entry.ious = [t[2] for t in result.tp[c]]
        entry.fp = len(result.fp[c])
        entry.fn = len(result.fn[c])
    return PQReport(per_class)


def aggregate_reports(reports: Iterable[PQReport]) -> PQReport:
    """Pool TP/FP/FN counts and IoUs over images, then recompute PQ."""
    reports = list(reports)
    if not reports:
        raise MaskError("nothing to aggregate")
    n = len(reports[0].per_class)
    pooled = [ClassPQ() for _ in range(n)]
    for rep in reports:
        for acc, c in zip(pooled, rep.per_class):
            acc.tp += c.tp
            acc.fp += c.fp
            acc.fn += c.fn
            acc.ious.extend(c.ious)
    return PQReport(pooled)


def label_instances(foreground: np.ndarray) -> np.ndarray:
    """4-connected components of a boolean mask, numbered from 1."""
    labels, _ = ndimage.label(np.asarray(foreground, dtype=bool))
    return labels.astype(np.int64)


def classify_instances(instance_map, leaf_probs, tree: ClassTree, cut: LabelSet) -> np.ndarray:
    """Assign each instance the cut member with the largest summed mass.

    ``leaf_probs`` is HxWx(c+1) with background last; only the leaf
    channels vote.  Ties go to the lowest member index.
    """
    instance_map = np.asarray(instance_map)
    leaf_probs = np.asarray(leaf_probs, dtype=float)
    if leaf_probs.shape[:2] != instance_map.shape:
        raise MaskError(f"probability map {leaf_probs.shape[:2]} does not match instance map {instance_map.shape}")
    class_map = np.zeros(instance_map.shape, dtype=np.int64)
    on = instance_map > 0
    if not on.any():
        return class_map
    member_mass = project_distribution(tree, cut, leaf_probs[on][:, : tree.n_leaves])
    ids, inverse = np.unique(instance_map[on], return_inverse=True)
    votes = np.zeros((ids.size, cut.m))
    np.add.at(votes, inverse, member_mass)
    class_map[on] = votes.argmax(axis=1)[inverse] + 1
    return class_map


REPORT_COLUMNS = ("image", "class_name", "tp", "fp", "fn", "sum_iou", "pq")


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else repr(float(value))


def write_report(path, reports: Sequence[tuple[str, PQReport]], class_names: Sequence[str]) -> PQReport:
    """Tab-separated per-image, per-class rows followed by pooled summary rows.

    Returns the pooled report.
    """
    pooled = aggregate_reports(rep for _, rep in reports)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for image, rep in reports:
            for name, c in zip(class_names, rep.per_class):
                writer.writerow([image, name, c.tp, c.fp, c.fn, repr(c.sum_iou), _fmt(c.pq)])
        for name, c in zip(class_names, pooled.per_class):
            writer.writerow(["ALL", name, c.tp, c.fp, c.fn, repr(c.sum_iou), _fmt(c.pq)])
        total = ClassPQ()
        for c in pooled.per_class:
            total.tp += c.tp
            total.fp += c.fp
            total.fn += c.fn
        writer.writerow(["SUMMARY", "mean_pq", total.tp, total.fp, total.fn,
                         repr(math.fsum(c.sum_iou for c in pooled.per_class)), _fmt(pooled.mean_pq)])
    return pooled
