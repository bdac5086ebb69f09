"""Differentiable layers: factorized causal convolutions, per-frame group
normalization, and residual blocks.

Causality contracts (all verified bit-exactly by the test suite):
  * spatial 1xkxk convs touch one frame at a time;
  * temporal kx1x1 convs left-pad (k-1) zero frames, so output index j
    depends only on input frames <= stride*(j-1)+1 (1-based);
  * transposed temporal convs emit 2T frames where frame f depends only on
    latent indices <= ceil(f/2);
  * normalization statistics never cross frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ShapeMismatch
from .tape import Tensor, _make, add, add_bias, silu

KIND_SPATIAL = "spatial_1kk"
KIND_TEMPORAL = "temporal_k11"
KIND_TEMPORAL_TRANSPOSED = "temporal_transposed_k11"


@dataclass(frozen=True)
class ConvSpec:
    kind: str
    k: int
    stride: int
    in_ch: int
    out_ch: int

    def __post_init__(self):
        if self.k < 1:
            raise ShapeMismatch(f"kernel size must be >= 1, got {self.k}")
        if self.stride not in (1, 2):
            raise ShapeMismatch(f"stride must be 1 or 2, got {self.stride}")
        if self.kind == KIND_SPATIAL and self.k % 2 == 0:
            raise ShapeMismatch("spatial convs require odd k for same-padding")
        if self.kind == KIND_TEMPORAL_TRANSPOSED and self.stride != 2:
            raise ShapeMismatch("transposed temporal convs are stride-2 only")


def _check_input(x: Tensor, in_ch: int, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"{op}: expected T,H,W,C input, got {x.data.shape}")
    if x.data.shape[-1] != in_ch:
        raise ShapeMismatch(
            f"{op}: input has {x.data.shape[-1]} channels, weights expect {in_ch}")


def conv_spatial(x: Tensor, w: Tensor, b: Tensor | None, stride: int) -> Tensor:
    """1xkxk convolution with symmetric same-padding; frames never mix."""
    k, _, ci, _ = w.data.shape
    _check_input(x, ci, "conv_spatial")
    T, H, W, _ = x.data.shape
    if H % stride or W % stride:
        raise ShapeMismatch(f"H,W must be divisible by stride, got {H}x{W} / {stride}")

    def bwd(out):
        def run():
            if x.requires_grad:
                x.accumulate(backend.spatial_bwd_x(out.grad, w.data, stride,
                                                   x.data.shape))
            if w.requires_grad:
                w.accumulate(backend.spatial_bwd_w(x.data, out.grad, stride, k))
        return run
    y = _make(backend.spatial_fwd(x.data, w.data, stride), (x, w), bwd)
    return add_bias(y, b) if b is not None else y


def conv_temporal(x: Tensor, w: Tensor, b: Tensor | None, stride: int,
                  padding: str = "causal") -> Tensor:
    """kx1x1 temporal convolution.

    padding="causal" left-pads (k-1) zero frames (encoder/decoder path);
    padding="same" pads symmetrically (discriminator only, non-causal).
    """
    k, ci, _ = w.data.shape
    _check_input(x, ci, "conv_temporal")
    if padding == "causal":
        pl, pr = k - 1, 0
    elif padding == "same":
        pl = (k - 1) // 2
        pr = k - 1 - pl
    else:
        raise ShapeMismatch(f"unknown temporal padding {padding!r}")
    T = x.data.shape[0]
    if T + pl + pr < k:
        raise ShapeMismatch(f"input of {T} frames too short for k={k}")

    def bwd(out):
        def run():
            if x.requires_grad:
                x.accumulate(backend.temporal_bwd_x(out.grad, w.data, stride,
                                                    pl, pr, x.data.shape))
            if w.requires_grad:
                w.accumulate(backend.temporal_bwd_w(x.data, out.grad, stride,
                                                    pl, pr, k))
        return run
    y = _make(backend.temporal_fwd(x.data, w.data, stride, pl, pr), (x, w), bwd)
    return add_bias(y, b) if b is not None else y


def conv_temporal_transposed(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Causal stride-2 temporal upsampling: 2T output frames, frame f drawing
    only on latent indices <= ceil(f/2)."""
    k, two, ci, _ = w.data.shape
    if two != 2:
        raise ShapeMismatch(f"transposed weights need a phase axis of 2, got {two}")
    _check_input(x, ci, "conv_temporal_transposed")

    def bwd(out):
        def run():
            if x.requires_grad:
                x.accumulate(backend.transposed_bwd_x(out.grad, w.data,
                                                      x.data.shape))
            if w.requires_grad:
                w.accumulate(backend.transposed_bwd_w(x.data, out.grad, k))
        return run
    y = _make(backend.transposed_fwd(x.data, w.data), (x, w), bwd)
    return add_bias(y, b) if b is not None else y


def group_norm_frame(x: Tensor, gamma: Tensor, beta: Tensor,
                     groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization with statistics strictly inside each frame."""
    T, H, W, C = x.data.shape
    if C % groups:
        raise ShapeMismatch(f"{C} channels not divisible into {groups} groups")
    cg = C // groups
    xg = x.data.reshape(T, H, W, groups, cg)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    var = xg.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(T, H, W, C)
    y = xhat * gamma.data + beta.data

    def bwd(out):
        def run():
            gy = out.grad
            if beta.requires_grad:
                beta.accumulate(gy.sum(axis=(0, 1, 2)))
            if gamma.requires_grad:
                gamma.accumulate((gy * xhat).sum(axis=(0, 1, 2)))
            if x.requires_grad:
                gh = (gy * gamma.data).reshape(T, H, W, groups, cg)
                xh = xhat.reshape(T, H, W, groups, cg)
                m1 = gh.mean(axis=(1, 2, 4), keepdims=True)
                m2 = (gh * xh).mean(axis=(1, 2, 4), keepdims=True)
                gx = (gh - m1 - xh * m2) * inv
                x.accumulate(gx.reshape(T, H, W, C))
        return run
    return _make(y, (x, gamma, beta), bwd)


# -- parameterized layers ------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class SpatialConv:
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int,
                 rng: np.random.Generator, zero_init: bool = False,
                 dtype=np.float32):
        self.spec = ConvSpec(KIND_SPATIAL, k, stride, in_ch, out_ch)
        shape = (k, k, in_ch, out_ch)
        w = np.zeros(shape, dtype) if zero_init else _uniform(rng, shape, k * k * in_ch, dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_spatial(x, self.w, self.b, self.spec.stride)

    def named_params(self):
        return [("w", self.w), ("b", self.b)]


class TemporalConv:
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int,
                 rng: np.random.Generator, zero_init: bool = False,
                 padding: str = "causal", dtype=np.float32):
        self.spec = ConvSpec(KIND_TEMPORAL, k, stride, in_ch, out_ch)
        self.padding = padding
        shape = (k, in_ch, out_ch)
        w = np.zeros(shape, dtype) if zero_init else _uniform(rng, shape, k * in_ch, dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_temporal(x, self.w, self.b, self.spec.stride, self.padding)

    def named_params(self):
        return [("w", self.w), ("b", self.b)]


class TemporalTransposedConv:
    def __init__(self, in_ch: int, out_ch: int, k: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.spec = ConvSpec(KIND_TEMPORAL_TRANSPOSED, k, 2, in_ch, out_ch)
        shape = (k, 2, in_ch, out_ch)
        self.w = Tensor(_uniform(rng, shape, k * in_ch, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_temporal_transposed(x, self.w, self.b)

    def named_params(self):
        return [("w", self.w), ("b", self.b)]


class FrameGroupNorm:
    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5,
                 dtype=np.float32):
        if channels % groups:
            groups = 1
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm_frame(x, self.gamma, self.beta, self.groups, self.eps)

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class ResidualBlock:
    """x (+ 1x1x1 projection when widths differ) + norm/act/conv twice.

    The closing temporal conv is stride-1 causal and zero-initialized so the
    block starts as an identity.
    """

    def __init__(self, in_ch: int, out_ch: int, k_spatial: int, k_temporal: int,
                 rng: np.random.Generator, groups: int = 8, dtype=np.float32):
        self.norm1 = FrameGroupNorm(in_ch, groups, dtype=dtype)
        self.conv_s = SpatialConv(in_ch, out_ch, k_spatial, 1, rng, dtype=dtype)
        self.norm2 = FrameGroupNorm(out_ch, groups, dtype=dtype)
        self.conv_t = TemporalConv(out_ch, out_ch, k_temporal, 1, rng,
                                   zero_init=True, dtype=dtype)
        self.proj = None
        if in_ch != out_ch:
            self.proj = SpatialConv(in_ch, out_ch, 1, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv_s(silu(self.norm1(x)))
        h = self.conv_t(silu(self.norm2(h)))
        skip = self.proj(x) if self.proj is not None else x
        return add(skip, h)

    def named_params(self):
        out = []
        for prefix, mod in (("norm1", self.norm1), ("conv_s", self.conv_s),
                            ("norm2", self.norm2), ("conv_t", self.conv_t)):
            out += [(f"{prefix}.{n}", t) for n, t in mod.named_params()]
        if self.proj is not None:
            out += [(f"proj.{n}", t) for n, t in self.proj.named_params()]
        return out
