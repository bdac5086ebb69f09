"""Forward/inverse 3D Haar transform with a causal temporal convention.

Orthonormal butterflies: each axis pair (a, b) maps to
((a + b)/sqrt(2), (b - a)/sqrt(2)). Subband channel index is
4*temporal_high + 2*vertical_high + horizontal_high, so channel 0 is LLL.

Temporal pairing supports two modes:
  * nopad            - D even, plain pairing; the transform is orthonormal.
  * causal_replicate - D odd, a synthetic copy of slice 1 is prepended before
                       pairing, so frame f depends only on slices <= max(1, 2f-1)
                       and frame 1 depends on slice 1 alone. The synthetic
                       slice is discarded on inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OddSpatialDim, ParityMismatch, ShapeMismatch
from .volume import DOMAIN_NORMALIZED, Volume

PAD_CAUSAL_REPLICATE = "causal_replicate"
PAD_NONE = "nopad"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass
class WaveletVolume:
    """F x H/2 x W/2 x 8 subband tensor plus temporal-padding metadata."""

    data: np.ndarray
    pad_mode: str
    original_D: int

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != 8:
            raise ShapeMismatch(
                f"wavelet data must be F x H' x W' x 8, got {self.data.shape}")
        F = self.data.shape[0]
        if self.pad_mode == PAD_CAUSAL_REPLICATE:
            if self.original_D % 2 != 1 or F != (self.original_D + 1) // 2:
                raise ParityMismatch(
                    f"causal_replicate needs odd original_D with F=(D+1)/2; "
                    f"got D={self.original_D}, F={F}")
        elif self.pad_mode == PAD_NONE:
            if self.original_D % 2 != 0 or F != self.original_D // 2:
                raise ParityMismatch(
                    f"nopad needs even original_D with F=D/2; "
                    f"got D={self.original_D}, F={F}")
        else:
            raise ParityMismatch(f"unknown pad_mode {self.pad_mode!r}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]


def _split(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    lo_src = [slice(None)] * x.ndim
    hi_src = [slice(None)] * x.ndim
    lo_src[axis] = slice(0, None, 2)
    hi_src[axis] = slice(1, None, 2)
    a, b = x[tuple(lo_src)], x[tuple(hi_src)]
    return (a + b) * _INV_SQRT2, (b - a) * _INV_SQRT2


def _merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=lo.dtype)
    a_dst = [slice(None)] * lo.ndim
    b_dst = [slice(None)] * lo.ndim
    a_dst[axis] = slice(0, None, 2)
    b_dst[axis] = slice(1, None, 2)
    out[tuple(a_dst)] = (lo - hi) * _INV_SQRT2
    out[tuple(b_dst)] = (lo + hi) * _INV_SQRT2
    return out


def haar_forward(v: Volume | np.ndarray, pad_mode: str) -> WaveletVolume:
    """3D Haar transform of a D x H x W volume into F x H/2 x W/2 x 8 subbands."""
    x = v.data if isinstance(v, Volume) else np.asarray(v)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected a 3-D volume, got shape {x.shape}")
    D, H, W = x.shape
    if H % 2 or W % 2:
        raise OddSpatialDim(f"H and W must be even, got {H}x{W}")
    if pad_mode == PAD_CAUSAL_REPLICATE:
        if D % 2 != 1:
            raise ParityMismatch(f"causal_replicate requires odd D, got {D}")
        x = np.concatenate([x[:1], x], axis=0)
    elif pad_mode == PAD_NONE:
        if D % 2 != 0:
            raise ParityMismatch(f"nopad requires even D, got {D}")
    else:
        raise ParityMismatch(f"unknown pad_mode {pad_mode!r}")

    lo_t, hi_t = _split(x, axis=0)
    bands = {}
    for t_bit, plane in ((0, lo_t), (1, hi_t)):
        lo_v, hi_v = _split(plane, axis=1)
        for v_bit, row in ((0, lo_v), (1, hi_v)):
            lo_h, hi_h = _split(row, axis=2)
            bands[4 * t_bit + 2 * v_bit + 0] = lo_h
            bands[4 * t_bit + 2 * v_bit + 1] = hi_h
    data = np.stack([bands[c] for c in range(8)], axis=-1)
    return WaveletVolume(data=data, pad_mode=pad_mode, original_D=D)


def inverse_data(w_data: np.ndarray, pad_mode: str, original_D: int) -> np.ndarray:
    """haar_inverse on a raw subband array; returns the D x H x W array."""
    if w_data.ndim != 4 or w_data.shape[-1] != 8:
        raise ShapeMismatch(f"wavelet data must be F x H' x W' x 8, got {w_data.shape}")
    planes = {}
    for t_bit in (0, 1):
        rows = {}
        for v_bit in (0, 1):
            lo_h = w_data[..., 4 * t_bit + 2 * v_bit + 0]
            hi_h = w_data[..., 4 * t_bit + 2 * v_bit + 1]
            rows[v_bit] = _merge(lo_h, hi_h, axis=2)
        planes[t_bit] = _merge(rows[0], rows[1], axis=1)
    x = _merge(planes[0], planes[1], axis=0)
    if pad_mode == PAD_CAUSAL_REPLICATE:
        x = x[1:]
    if x.shape[0] != original_D:
        raise ShapeMismatch(
            f"inverse produced {x.shape[0]} slices, expected {original_D}")
    return x


def haar_inverse(w: WaveletVolume) -> Volume:
    """Invert the transform; the synthetic prepended slice, if any, is dropped."""
    data = inverse_data(w.data, w.pad_mode, w.original_D)
    return Volume(data=data.astype(np.float32, copy=False),
                  domain=DOMAIN_NORMALIZED)


def inverse_adjoint(grad_volume: np.ndarray, pad_mode: str) -> np.ndarray:
    """Adjoint of `inverse_data` as a linear map; used by backprop.

    The adjoint of dropping the synthetic slice is prepending a zero-gradient
    slice, and the adjoint of the orthonormal inverse butterfly is the plain
    forward butterfly.
    """
    g = np.asarray(grad_volume)
    if pad_mode == PAD_CAUSAL_REPLICATE:
        zero = np.zeros_like(g[:1])
        g = np.concatenate([zero, g], axis=0)
    lo_t, hi_t = _split(g, axis=0)
    bands = {}
    for t_bit, plane in ((0, lo_t), (1, hi_t)):
        lo_v, hi_v = _split(plane, axis=1)
        for v_bit, row in ((0, lo_v), (1, hi_v)):
            lo_h, hi_h = _split(row, axis=2)
            bands[4 * t_bit + 2 * v_bit + 0] = lo_h
            bands[4 * t_bit + 2 * v_bit + 1] = hi_h
    return np.stack([bands[c] for c in range(8)], axis=-1)
