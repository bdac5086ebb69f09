"""Minimal reverse-mode autodiff over NumPy arrays.

Activations in the codec are T x H x W x C arrays ("Tensor4"); parameters and
scalar losses reuse the same Tensor class at other ranks. The engine is
tape-based: each op records a backward closure, and `backward()` replays them in
reverse topological order. Reduction order inside every op is fixed, so two
forward passes over identical inputs are bit-identical - causality tests rely
on this.

Gradients propagate only through tensors whose `requires_grad` is set (or that
depend on one), so frozen subgraphs cost neither memory nor backward time.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch


class Tensor:
    """An ndarray plus an optional gradient buffer and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-topological sweep from this node; frees the tape afterwards."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed, dtype=self.data.dtype).copy()
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in topo:
            node._backward = None
            node._parents = ()


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[["Tensor"], Callable[[], None]]) -> Tensor:
    """Create an op output; the tape is only recorded if a parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# -- arithmetic ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bwd(out):
        def run():
            if a.requires_grad:
                a.accumulate(out.grad)
            if b.requires_grad:
                b.accumulate(out.grad)
        return run
    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bwd(out):
        def run():
            if a.requires_grad:
                a.accumulate(out.grad)
            if b.requires_grad:
                b.accumulate(-out.grad)
        return run
    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def bwd(out):
        def run():
            if a.requires_grad:
                a.accumulate(out.grad * b.data)
            if b.requires_grad:
                b.accumulate(out.grad * a.data)
        return run
    return _make(a.data * b.data, (a, b), bwd)


def affine(x: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(out.grad * scale)
        return run
    return _make(x.data * scale + shift, (x,), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast along the trailing (channel) axis."""
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[-1]:
        raise ShapeMismatch(
            f"bias of shape {b.data.shape} does not match channels {x.data.shape[-1]}")

    def bwd(out):
        def run():
            if x.requires_grad:
                x.accumulate(out.grad)
            if b.requires_grad:
                axes = tuple(range(out.grad.ndim - 1))
                b.accumulate(out.grad.sum(axis=axes))
        return run
    return _make(x.data + b.data, (x, b), bwd)


def square(x: Tensor) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(out.grad * (2.0 * x.data))
        return run
    return _make(x.data * x.data, (x,), bwd)


def absolute(x: Tensor) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(out.grad * np.sign(x.data))
        return run
    return _make(np.abs(x.data), (x,), bwd)


def log_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); gradient is zero where the clamp is active."""
    clipped = np.maximum(x.data, floor)

    def bwd(out):
        def run():
            g = np.where(x.data > floor, out.grad / clipped, 0.0)
            x.accumulate(g)
        return run
    return _make(np.log(clipped), (x,), bwd)


# -- activations --------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bwd(out):
        def run():
            x.accumulate(out.grad * s * (1.0 - s))
        return run
    return _make(s, (x,), bwd)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bwd(out):
        def run():
            x.accumulate(out.grad * (s * (1.0 + x.data * (1.0 - s))))
        return run
    return _make(x.data * s, (x,), bwd)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(out.grad * np.where(x.data > 0, 1.0, alpha))
        return run
    return _make(np.where(x.data > 0, x.data, alpha * x.data), (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    # stable: softplus(z) = max(z, 0) + log1p(exp(-|z|))
    val = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    s = _sigmoid(x.data)

    def bwd(out):
        def run():
            x.accumulate(out.grad * s)
        return run
    return _make(val, (x,), bwd)


# -- reductions ---------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(np.full_like(x.data, out.grad))
        return run
    return _make(x.data.sum(), (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def bwd(out):
        def run():
            x.accumulate(np.full_like(x.data, out.grad / n))
        return run
    return _make(x.data.mean(), (x,), bwd)


def sum_axes(x: Tensor, axes: tuple[int, ...], keepdims: bool = False) -> Tensor:
    axes = tuple(a % x.data.ndim for a in axes)

    def bwd(out):
        def run():
            g = out.grad
            if not keepdims:
                for a in sorted(axes):
                    g = np.expand_dims(g, a)
            x.accumulate(np.broadcast_to(g, x.data.shape))
        return run
    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), bwd)


def mean_axes(x: Tensor, axes: tuple[int, ...], keepdims: bool = False) -> Tensor:
    axes = tuple(a % x.data.ndim for a in axes)
    n = int(np.prod([x.data.shape[a] for a in axes]))

    def bwd(out):
        def run():
            g = out.grad / n
            if not keepdims:
                for a in sorted(axes):
                    g = np.expand_dims(g, a)
            x.accumulate(np.broadcast_to(g, x.data.shape))
        return run
    return _make(x.data.mean(axis=axes, keepdims=keepdims), (x,), bwd)


# -- shape ops ----------------------------------------------------------------

def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def run():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(int(lo), int(hi))
                    p.accumulate(out.grad[tuple(sl)])
        return run
    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[sl] = out.grad
            x.accumulate(g)
        return run
    return _make(x.data[sl].copy(), (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(out):
        def run():
            x.accumulate(out.grad.reshape(x.data.shape))
        return run
    return _make(x.data.reshape(shape), (x,), bwd)


def upsample2x_spatial(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling along axes 1 and 2 of a T,H,W,C tensor."""
    up = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(out):
        def run():
            T, H2, W2, C = out.grad.shape
            g = out.grad.reshape(T, H2 // 2, 2, W2 // 2, 2, C).sum(axis=(2, 4))
            x.accumulate(g)
        return run
    return _make(up, (x,), bwd)


# -- gradient checking --------------------------------------------------------

def grad_check(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
               directions: Sequence[np.ndarray] | None = None,
               h: float = 1e-5) -> float:
    """Relative error between the analytic directional derivative and a
    central finite difference with step h.

    `fn` must rebuild the graph from `leaves` on every call and return a
    scalar Tensor. Run with float64 leaves.
    """
    if directions is None:
        rng = np.random.default_rng(0)
        directions = [rng.standard_normal(l.data.shape) for l in leaves]
    directions = [np.asarray(d, dtype=np.float64) for d in directions]

    for l in leaves:
        l.grad = None
    out = fn()
    out.backward()
    analytic = 0.0
    for l, d in zip(leaves, directions):
        if l.grad is not None:
            analytic += float(np.sum(l.grad * d))

    base = [l.data.copy() for l in leaves]
    for l, b, d in zip(leaves, base, directions):
        l.data = b + h * d
    f_plus = float(fn().data)
    for l, b, d in zip(leaves, base, directions):
        l.data = b - h * d
    f_minus = float(fn().data)
    for l, b in zip(leaves, base):
        l.data = b

    fd = (f_plus - f_minus) / (2.0 * h)
    return abs(analytic - fd) / max(1.0, abs(fd))
