"""Randomised finite-difference checks for the losses and the network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnet import MicroUNet, NetConfig, backward, forward
from .hierarchy import ClassTree, LabelSet, validate_cut
from .losses import BACKGROUND, IGNORE, CombinedLossParams, TargetField, combined_loss, finite_diff_check, softmax

LEAF_LOSSES = ("ce", "ft")
CUT_LOSSES = ("mce", "mft")


def random_cut(tree: ClassTree, rng: np.random.Generator, leaves_only: bool = False) -> LabelSet:
    """A random antichain: each subtree is kept whole, split, or dropped."""
    names: list[str] = []

    def visit(node):
        r = rng.random()
        if tree.is_leaf(node):
            if r < 0.8:
                names.append(tree.names[node])
        elif not leaves_only and r < 0.4:
            names.append(tree.names[node])
        elif r < 0.9 or leaves_only:
            for child in tree.children[node]:
                visit(child)

    while not names:
        for child in tree.children[tree.root] or (tree.root,):
            visit(child)
    return validate_cut(tree, names)


def random_batch(tree: ClassTree, rng: np.random.Generator, n_max: int = 50, leaves_only: bool = False):
    cut = random_cut(tree, rng, leaves_only=leaves_only)
    n = int(rng.integers(1, n_max + 1))
    labels = rng.integers(0, cut.m, size=n)
    roll = rng.random(n)
    labels[roll < 0.2] = BACKGROUND
    labels[roll > 0.9] = IGNORE
    scores = rng.normal(0.0, 2.0, size=(n, tree.n_leaves + 1))
    return scores, TargetField(labels, cut)


def loss_gradcheck(tree: ClassTree, loss: str, n_batches: int = 100, h: float = 1e-5, seed: int = 0,
                   params=None) -> float:
    """Worst relative gradient error over ``n_batches`` random batches."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_batches):
        scores, targets = random_batch(tree, rng, leaves_only=loss in LEAF_LOSSES)
        worst = max(worst, finite_diff_check(loss, scores, targets, tree, params, h))
    return worst


def network_gradcheck(tree: ClassTree, size: int = 8, n_samples: int = 50, h: float = 1e-5, seed: int = 0,
                      params: CombinedLossParams = CombinedLossParams(), cut: LabelSet = None) -> float:
    """Combined loss through the micro-UNet against central differences on
    ``n_samples`` randomly chosen parameters."""
    rng = np.random.default_rng(seed)
    net = MicroUNet(NetConfig(tree.n_leaves + 1), seed=seed)
    patch = rng.random((size, size, 3))
    cut = cut or random_cut(tree, rng)
    labels = rng.integers(-1, cut.m, size=size * size)
    targets = TargetField(labels, cut)

    def loss_and_grad():
        scores = forward(net, patch)
        loss, grad = combined_loss(softmax(scores.reshape(-1, scores.shape[-1])), targets, tree, params)
        return loss, grad.reshape(scores.shape)

    _, upstream = loss_and_grad()
    analytic = backward(net, patch, upstream)
    names = list(net.params)
    worst = 0.0
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in net.params[name].shape)
        orig = net.params[name][idx]
        net.params[name][idx] = orig + h
        up = loss_and_grad()[0]
        net.params[name][idx] = orig - h
        down = loss_and_grad()[0]
        net.params[name][idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric)))
    return worst


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerances: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.errors[k] <= self.tolerances[k] for k in self.errors)

    def lines(self) -> list[str]:
        return [
            f"{name:10s} max rel error {err:.3e}  tol {self.tolerances[name]:.0e}  "
            f"{'ok' if err <= self.tolerances[name] else 'FAIL'}"
            for name, err in self.errors.items()
        ]


def run_gradcheck(tree: ClassTree, losses=("ce", "mce", "ft", "mft"), n_batches: int = 100, h: float = 1e-5,
                  seed: int = 0, tol_loss: float = 1e-4, tol_net: float = 1e-3, network: bool = True) -> GradcheckReport:
    errors, tols = {}, {}
    for i, name in enumerate(losses):
        errors[name] = loss_gradcheck(tree, name, n_batches, h, seed + i)
        tols[name] = tol_loss
    if network:
        errors["network"] = network_gradcheck(tree, h=h, seed=seed)
        tols["network"] = tol_net
    return GradcheckReport(errors, tols)
