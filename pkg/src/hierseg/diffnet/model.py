"""Micro U-Net pixel classifier built on the reverse-mode engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, concat, conv2d, maxpool2, parameter, relu, upsample2


@dataclass(frozen=True)
class NetConfig:
    n_outputs: int
    widths: tuple[int, int, int] = (8, 16, 32)
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {"n_outputs": self.n_outputs, "widths": list(self.widths), "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(n_outputs=int(d["n_outputs"]), widths=tuple(int(w) for w in d["widths"]), in_channels=int(d["in_channels"]))


def _layer_shapes(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    w1, w2, w3 = cfg.widths
    convs = [
        ("down1", 3, cfg.in_channels, w1),
        ("down2", 3, w1, w2),
        ("bottleneck", 3, w2, w3),
        ("up1", 3, w3 + w2, w2),
        ("up2", 3, w2 + w1, w1),
        ("head", 1, w1, cfg.n_outputs),
    ]
    shapes = []
    for name, k, cin, cout in convs:
        shapes.append((f"{name}.weight", (k, k, cin, cout)))
        shapes.append((f"{name}.bias", (cout,)))
    return shapes


class MicroUNet:
    """Two down blocks, a bottleneck, two up blocks and a 1x1 head.

    Parameters live in ``self.params`` (name -> float64 array) in a fixed
    canonical order, which is also the checkpoint order.
    """

    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, shape in _layer_shapes(config):
            if name.endswith(".bias"):
                self.params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                bound = np.sqrt(6.0 / fan_in)
                self.params[name] = rng.uniform(-bound, bound, size=shape)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "MicroUNet":
        net = MicroUNet.__new__(MicroUNet)
        net.config = self.config
        net.params = {k: v.copy() for k, v in self.params.items()}
        return net

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = np.array(state[k], dtype=np.float64, copy=True)

    def graph(self, batch) -> tuple[Tensor, dict[str, Tensor]]:
        """Build the forward graph; returns (scores tensor, parameter leaves)."""
        x = batch if isinstance(batch, Tensor) else Tensor(_as_batch(batch))
        n, h, w, c = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"patch size must be a multiple of 4, got {h}x{w}")
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        p = {k: parameter(v) for k, v in self.params.items()}

        def block(name, inp):
            return conv2d(inp, p[f"{name}.weight"], p[f"{name}.bias"])

        skip1 = relu(block("down1", x))
        skip2 = relu(block("down2", maxpool2(skip1)))
        deep = relu(block("bottleneck", maxpool2(skip2)))
        up = relu(block("up1", concat([upsample2(deep), skip2])))
        up = relu(block("up2", concat([upsample2(up), skip1])))
        return block("head", up), p


def _as_batch(patch) -> np.ndarray:
    arr = np.asarray(patch, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected an HxWxC patch or NxHxWxC batch, got shape {arr.shape}")
    return arr


def forward(net: MicroUNet, patch) -> np.ndarray:
    """Per-pixel scores: HxWx(c+1) for one patch, NxHxWx(c+1) for a batch."""
    single = np.ndim(patch) == 3
    out, _ = net.graph(patch)
    return out.value[0] if single else out.value


def backward(net: MicroUNet, patch, upstream) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(upstream * forward(net, patch))``."""
    single = np.ndim(patch) == 3
    out, p = net.graph(patch)
    upstream = np.asarray(upstream, dtype=np.float64)
    if single:
        upstream = upstream[None]
    out.backward(upstream)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in p.items()}


def forward_backward(net: MicroUNet, batch, loss_grad_fn):
    """One pass: scores -> (loss, dL/dscores) via ``loss_grad_fn`` -> grads."""
    out, p = net.graph(batch)
    loss, upstream = loss_grad_fn(out.value)
    out.backward(upstream)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in p.items()}
    return loss, grads
