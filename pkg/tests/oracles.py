"""Slow, independent reference implementations used by the tests."""

import math
from fractions import Fraction

import numpy as np


def pixel_sets(instance_map, class_map):
    """{instance id: (class, frozenset of (row, col))}."""
    out = {}
    for (r, c), iid in np.ndenumerate(instance_map):
        if iid:
            cls, pixels = out.get(int(iid), (int(class_map[r, c]), set()))
            pixels.add((r, c))
            out[int(iid)] = (cls, pixels)
    return {k: (cls, frozenset(p)) for k, (cls, p) in out.items()}


def brute_force_pq(pred, truth, n_classes):
    """Exhaustive pair enumeration followed by the PQ formula, per class.

    Returns {class: (tp, fp, fn, pq_float, pq_exact)} with pq None when the
    class has nothing at all.
    """
    P = pixel_sets(pred.instance_map, pred.class_map)
    G = pixel_sets(truth.instance_map, truth.class_map)
    out = {}
    for cls in range(1, n_classes + 1):
        preds = {k: s for k, (c, s) in P.items() if c == cls}
        gts = {k: s for k, (c, s) in G.items() if c == cls}
        matches = []
        for pk, ps in preds.items():
            for gk, gs in gts.items():
                inter, union = len(ps & gs), len(ps | gs)
                if 2 * inter > union:
                    matches.append((pk, gk, inter, union))
        assert len({m[0] for m in matches}) == len(matches)
        assert len({m[1] for m in matches}) == len(matches)
        tp = len(matches)
        fp = len(preds) - tp
        fn = len(gts) - tp
        denom = tp + 0.5 * fp + 0.5 * fn
        if denom == 0:
            out[cls] = (tp, fp, fn, None, None)
            continue
        pq = math.fsum(i / u for _, _, i, u in matches) / denom
        exact = sum((Fraction(i, u) for _, _, i, u in matches), Fraction(0)) / (Fraction(tp) + Fraction(fp + fn, 2))
        out[cls] = (tp, fp, fn, pq, exact)
    return out


def random_mask_pair(rng, shape=None, max_instances=5, n_classes=3):
    """Random non-empty rectangles painted in order (later ones overwrite).

    ``shape`` defaults to a random size of at most 16x16.
    """
    from hierseg.metrics import MaskPair

    h, w = (int(v) for v in rng.integers(2, 17, size=2)) if shape is None else shape
    inst = np.zeros((h, w), dtype=np.int64)
    cls = np.zeros((h, w), dtype=np.int64)
    ids = rng.choice(np.arange(1, 50), size=max_instances, replace=False)
    for iid in ids[: int(rng.integers(0, max_instances + 1))]:
        r0, c0 = int(rng.integers(h)), int(rng.integers(w))
        r1, c1 = int(rng.integers(r0, h)) + 1, int(rng.integers(c0, w)) + 1
        inst[r0:r1, c0:c1] = iid
        cls[r0:r1, c0:c1] = int(rng.integers(1, n_classes + 1))
    return MaskPair(inst, cls)


def perturb(rng, pair, n_classes=3):
    """A prediction near ``pair``: shifted instances, relabels, new ids."""
    from hierseg.metrics import MaskPair

    h, w = pair.shape
    inst = np.zeros_like(pair.instance_map)
    cls = np.zeros_like(pair.class_map)
    for iid in np.unique(pair.instance_map[pair.instance_map > 0]):
        mask = pair.instance_map == iid
        c = int(pair.class_map[mask][0])
        if rng.random() < 0.15:
            continue
        if rng.random() < 0.2:
            c = int(rng.integers(1, n_classes + 1))
        dr, dc = (int(v) for v in rng.integers(-1, 2, size=2))
        mask = np.roll(mask, (dr, dc), axis=(0, 1))
        if rng.random() < 0.3:
            mask &= rng.random(mask.shape) < 0.8
        new_id = int(iid) + 100
        inst[mask] = new_id
        cls[mask] = c
    # sometimes add a spurious instance on top
    extra = random_mask_pair(rng, pair.shape, max_instances=1, n_classes=n_classes)
    if rng.random() < 0.3:
        on = extra.instance_map > 0
        inst[on] = extra.instance_map[on] + 500
        cls[on] = extra.class_map[on]
    return MaskPair(inst, cls)
