"""A small reverse-mode differentiation engine over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient to them.  ``Tensor.backward`` walks the graph in reverse
topological order.  Only the handful of image ops the micro-UNet needs are
provided; all of them work on NHWC float64 arrays.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, upstream=None):
        if upstream is None:
            upstream = np.ones_like(self.value)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != self.value.shape:
            raise ValueError(f"upstream gradient shape {upstream.shape} != output shape {self.value.shape}")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        self._accumulate(upstream)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_value = self.value + other.value

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(out_value, (self, other), backward)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_value = self.value * other.value

        def backward(g):
            self._accumulate(_unbroadcast(g * other.value, self.shape))
            other._accumulate(_unbroadcast(g * self.value, other.shape))

        return Tensor(out_value, (self, other), backward)

    def sum(self):
        def backward(g):
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor(self.value.sum(), (self,), backward)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0

    def backward(g):
        x._accumulate(g * mask)

    return Tensor(np.where(mask, x.value, 0.0), (x,), backward)


def _correlate(padded: np.ndarray, w: np.ndarray, h: int, wd: int) -> np.ndarray:
    kh, kw, _, cout = w.shape
    out = np.zeros(padded.shape[:1] + (h, wd, cout))
    for i in range(kh):
        for j in range(kw):
            out += padded[:, i : i + h, j : j + wd, :] @ w[i, j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """'Same' convolution; ``w`` has shape (kh, kw, c_in, c_out), odd kh, kw."""
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ValueError(f"conv expects {wcin} input channels, got {cin}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.value, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = _correlate(padded, w.value, h, wd) + b.value

    def backward(g):
        gmat = g.reshape(n * h * wd, cout)
        gw = np.empty(w.shape)
        for i in range(kh):
            for j in range(kw):
                window = np.ascontiguousarray(padded[:, i : i + h, j : j + wd, :]).reshape(-1, cin)
                gw[i, j] = window.T @ gmat
        w._accumulate(gw)
        b._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            # adjoint of a 'same' correlation: correlate with the flipped kernel
            flipped = w.value[::-1, ::-1].transpose(0, 1, 3, 2)
            gpad = np.pad(g, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
            x._accumulate(_correlate(gpad, flipped, h, wd))

    return Tensor(out, (x, w, b), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route gradient to the first max."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial size, got {h}x{w}")
    blocks = x.value.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        x._accumulate(gx)

    return Tensor(out, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def backward(g):
        x._accumulate(g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))

    return Tensor(out, (x,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(part)

    return Tensor(out, tuple(tensors), backward)
