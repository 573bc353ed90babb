"""Plain and hierarchy-modified cross entropy and focal Tversky losses.

Every loss takes per-pixel probabilities of shape ``(n, c + 1)`` (c leaf
classes, background last) and per-pixel labels expressed at a cut of the
class tree.  Labels are member indices of the cut, :data:`BACKGROUND` or
:data:`IGNORE`.  Losses are averaged over non-ignored pixels.

Each function returns ``(loss, grad)``.  By default ``grad`` is taken with
respect to the pre-softmax scores; pass ``wrt="probs"`` to get the
gradient with respect to the probabilities themselves (before the softmax
Jacobian is applied).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .hierarchy import ClassTree, LabelSet, check_fingerprint

__all__ = [
    "BACKGROUND",
    "IGNORE",
    "LossError",
    "TargetField",
    "TverskyParams",
    "CombinedLossParams",
    "softmax",
    "ce_loss",
    "mce_loss",
    "ft_loss",
    "mft_loss",
    "combined_loss",
    "finite_diff_check",
    "LOSSES",
]

BACKGROUND = -1
IGNORE = -2

LOG_GUARD = 1e-12


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class TargetField:
    labels: np.ndarray
    cut: LabelSet

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        bad = (labels >= self.cut.m) | (labels < IGNORE)
        if bad.any():
            raise LossError(f"label {labels[bad][0]} outside [0, {self.cut.m}) and not BACKGROUND/IGNORE")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class TverskyParams:
    alpha: float = 0.7
    gamma: float = 4.0 / 3.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise LossError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.gamma > 0.0:
            raise LossError(f"gamma must be positive, got {self.gamma}")
        if self.epsilon < 0.0:
            raise LossError(f"epsilon must be nonnegative, got {self.epsilon}")


@dataclass(frozen=True)
class CombinedLossParams:
    lambda_ce: float = 1.0
    lambda_ft: float = 1.0
    tversky: TverskyParams = field(default_factory=TverskyParams)

    def __post_init__(self):
        # zero weights are accepted so either term can be switched off
        if self.lambda_ce < 0 or self.lambda_ft < 0 or self.lambda_ce + self.lambda_ft <= 0:
            raise LossError(f"weights must be nonnegative and not both zero: {self.lambda_ce}, {self.lambda_ft}")


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def _check(probs, targets: TargetField, tree: Optional[ClassTree]) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise LossError(f"probabilities must be an (n, c+1) matrix, got shape {probs.shape}")
    if probs.shape[0] != targets.labels.shape[0]:
        raise LossError(f"{probs.shape[0]} pixels but {targets.labels.shape[0]} labels")
    if tree is not None:
        check_fingerprint(tree, targets.cut)
        if probs.shape[1] != tree.n_leaves + 1:
            raise LossError(f"expected {tree.n_leaves + 1} channels, got {probs.shape[1]}")
    n_leaves = probs.shape[1] - 1
    for leaves in targets.cut.leaves_per_member:
        if max(leaves) >= n_leaves:
            raise LossError("cut refers to leaves beyond the probability channels")
    if (probs < 0).any():
        raise LossError("probabilities must be nonnegative")
    if np.abs(probs.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
        raise LossError("probability rows must sum to 1")
    return probs


def _finish(loss: float, grad_probs: np.ndarray, probs: np.ndarray, wrt: str):
    if wrt == "probs":
        return loss, grad_probs
    if wrt == "scores":
        return loss, _softmax_backward(probs, grad_probs)
    raise LossError(f"wrt must be 'scores' or 'probs', got {wrt!r}")


def _member_sums(probs: np.ndarray, cut: LabelSet) -> np.ndarray:
    """(n, m) matrix of summed leaf probabilities per cut member."""
    out = np.empty((probs.shape[0], cut.m))
    for k, leaves in enumerate(cut.leaves_per_member):
        out[:, k] = probs[:, sorted(leaves)].sum(axis=1)
    return out


def mce_loss(probs, targets: TargetField, tree: Optional[ClassTree] = None, *, wrt: str = "scores"):
    """Cross entropy on cut-level probabilities (leaf mass summed per member).

    Background pixels score the background channel.  The gradient of each
    member sum is copied unchanged to every leaf in that member.
    """
    probs = _check(probs, targets, tree)
    n, width = probs.shape
    labels = targets.labels
    cut = targets.cut
    valid = labels != IGNORE
    count = int(valid.sum())
    grad = np.zeros_like(probs)
    if count == 0:
        return _finish(0.0, grad, probs, wrt)

    sums = np.concatenate([_member_sums(probs, cut), probs[:, -1:]], axis=1)
    col = np.where(labels == BACKGROUND, cut.m, labels)
    rows = np.flatnonzero(valid)
    picked = sums[rows, col[rows]]
    guarded = np.maximum(picked, LOG_GUARD)
    per_pixel = np.zeros(n)
    per_pixel[rows] = -np.log(guarded)
    loss = per_pixel.sum() / count

    d_sum = np.zeros(n)
    d_sum[rows] = np.where(picked > LOG_GUARD, -1.0 / guarded, 0.0) / count
    channels = [sorted(s) for s in cut.leaves_per_member] + [[width - 1]]
    for k, chans in enumerate(channels):
        hit = np.flatnonzero(valid & (col == k))
        if hit.size:
            grad[np.ix_(hit, chans)] = d_sum[hit, None]
    return _finish(loss, grad, probs, wrt)


def _require_leaf_cut(cut: LabelSet, what: str):
    if not cut.is_leaf_cut:
        raise LossError(f"{what} needs a cut made only of leaves; got {list(cut.names)}")


def _leaf_onehot(labels: np.ndarray, cut: LabelSet, width: int) -> np.ndarray:
    """One-hot t_ij over leaves plus background; ignored rows stay zero."""
    leaf_of_member = np.array([min(s) for s in cut.leaves_per_member], dtype=np.int64)
    onehot = np.zeros((labels.shape[0], width))
    labeled = labels >= 0
    onehot[np.flatnonzero(labeled), leaf_of_member[labels[labeled]]] = 1.0
    onehot[labels == BACKGROUND, width - 1] = 1.0
    return onehot


def ce_loss(probs, targets: TargetField, tree: Optional[ClassTree] = None, *, wrt: str = "scores"):
    """Standard cross entropy; the cut must consist of leaves only."""
    probs = _check(probs, targets, tree)
    _require_leaf_cut(targets.cut, "ce_loss")
    labels = targets.labels
    count = int((labels != IGNORE).sum())
    if count == 0:
        return _finish(0.0, np.zeros_like(probs), probs, wrt)
    t = _leaf_onehot(labels, targets.cut, probs.shape[1])
    guarded = np.maximum(probs, LOG_GUARD)
    per_pixel = -(t * np.log(guarded)).sum(axis=1)
    loss = per_pixel.sum() / count
    grad = np.where(probs > LOG_GUARD, -t / guarded, 0.0) / count
    return _finish(loss, grad, probs, wrt)


def _tversky_terms(num, denom, gamma):
    ratio = num / denom
    base = np.maximum(1.0 - ratio, 0.0)
    with np.errstate(divide="ignore"):
        d_base = np.where(base > 0, gamma * base ** (gamma - 1.0), 0.0)
    return base**gamma, d_base


def mft_loss(
    probs,
    targets: TargetField,
    tree: Optional[ClassTree] = None,
    params: TverskyParams = TverskyParams(),
    *,
    wrt: str = "scores",
):
    """Focal Tversky loss on cut-level sums.

    For a pixel labelled with member k the ratio is
    ``(P_k + eps) / (alpha + (1 - alpha) * sum_k' P_k' + eps)`` where the
    sum runs over the cut members only.  A background pixel uses the
    background channel as a one-member cut.
    """
    probs = _check(probs, targets, tree)
    labels = targets.labels
    cut = targets.cut
    alpha, gamma, eps = params.alpha, params.gamma, params.epsilon
    n, width = probs.shape
    grad = np.zeros_like(probs)
    valid = labels != IGNORE
    count = int(valid.sum())
    if count == 0:
        return _finish(0.0, grad, probs, wrt)

    sums = _member_sums(probs, cut)
    fg = labels >= 0
    bg = labels == BACKGROUND
    target_sum = np.zeros(n)
    total = np.zeros(n)
    target_sum[fg] = sums[fg, labels[fg]]
    total[fg] = sums[fg].sum(axis=1)
    target_sum[bg] = probs[bg, -1]
    total[bg] = probs[bg, -1]

    num = target_sum + eps
    denom = alpha + (1.0 - alpha) * total + eps
    term, d_base = _tversky_terms(num, denom, gamma)
    term = np.where(valid, term, 0.0)
    loss = term.sum() / count

    d_base = np.where(valid, d_base, 0.0) / count
    # base = 1 - num/denom
    d_total = d_base * num * (1.0 - alpha) / denom**2
    d_target = -d_base / denom
    covered = np.zeros(width, dtype=bool)
    for leaves in cut.leaves_per_member:
        covered[sorted(leaves)] = True
    grad[fg] = np.where(covered, 1.0, 0.0)[None, :] * d_total[fg, None]
    for k, leaves in enumerate(cut.leaves_per_member):
        rows = np.flatnonzero(labels == k)
        if rows.size:
            grad[np.ix_(rows, sorted(leaves))] += d_target[rows, None]
    grad[bg, -1] = d_total[bg] + d_target[bg]
    return _finish(loss, grad, probs, wrt)


def ft_loss(
    probs,
    targets: TargetField,
    tree: Optional[ClassTree] = None,
    params: TverskyParams = TverskyParams(),
    *,
    wrt: str = "scores",
):
    """Focal Tversky loss with one-hot leaf labels; leaf cuts only.

    Class sums run over the leaves of the cut (or over the background
    channel alone for background pixels).
    """
    probs = _check(probs, targets, tree)
    _require_leaf_cut(targets.cut, "ft_loss")
    labels = targets.labels
    alpha, gamma, eps = params.alpha, params.gamma, params.epsilon
    n, width = probs.shape
    valid = labels != IGNORE
    count = int(valid.sum())
    if count == 0:
        return _finish(0.0, np.zeros_like(probs), probs, wrt)

    t = _leaf_onehot(labels, targets.cut, width)
    in_cut = np.zeros((n, width))
    for leaves in targets.cut.leaves_per_member:
        in_cut[:, sorted(leaves)] = 1.0
    in_cut[labels == BACKGROUND] = 0.0
    in_cut[labels == BACKGROUND, -1] = 1.0

    num = (t * probs).sum(axis=1) + eps
    denom = alpha * t.sum(axis=1) + (1.0 - alpha) * (in_cut * probs).sum(axis=1) + eps
    term, d_base = _tversky_terms(num, denom, gamma)
    term = np.where(valid, term, 0.0)
    loss = term.sum() / count

    d_base = np.where(valid, d_base, 0.0) / count
    grad = d_base[:, None] * (-t / denom[:, None] + in_cut * (num * (1.0 - alpha) / denom**2)[:, None])
    return _finish(loss, grad, probs, wrt)


def combined_loss(
    probs,
    targets: TargetField,
    tree: Optional[ClassTree] = None,
    params: CombinedLossParams = CombinedLossParams(),
    *,
    wrt: str = "scores",
):
    loss_ce, grad_ce = mce_loss(probs, targets, tree, wrt=wrt)
    loss_ft, grad_ft = mft_loss(probs, targets, tree, params.tversky, wrt=wrt)
    loss = params.lambda_ce * loss_ce + params.lambda_ft * loss_ft
    return loss, params.lambda_ce * grad_ce + params.lambda_ft * grad_ft


def _bind(name: str, params) -> Callable:
    if name in ("ce", "mce"):
        fn = ce_loss if name == "ce" else mce_loss
        return lambda p, t, tree, wrt="scores": fn(p, t, tree, wrt=wrt)
    if name in ("ft", "mft"):
        fn = ft_loss if name == "ft" else mft_loss
        tv = params.tversky if isinstance(params, CombinedLossParams) else (params or TverskyParams())
        return lambda p, t, tree, wrt="scores": fn(p, t, tree, tv, wrt=wrt)
    if name == "combined":
        cp = params if isinstance(params, CombinedLossParams) else CombinedLossParams()
        return lambda p, t, tree, wrt="scores": combined_loss(p, t, tree, cp, wrt=wrt)
    raise LossError(f"unknown loss {name!r}; choose from {LOSSES}")


LOSSES = ("ce", "mce", "ft", "mft", "combined")


def finite_diff_check(loss: str, scores, targets: TargetField, tree=None, params=None, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error of one entry is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    fn = _bind(loss, params)
    scores = np.array(scores, dtype=float)
    _, analytic = fn(softmax(scores), targets, tree)
    worst = 0.0
    for idx in np.ndindex(scores.shape):
        orig = scores[idx]
        scores[idx] = orig + h
        up = fn(softmax(scores), targets, tree)[0]
        scores[idx] = orig - h
        down = fn(softmax(scores), targets, tree)[0]
        scores[idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(numeric)))
    return worst
