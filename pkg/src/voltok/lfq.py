"""Lookup-free quantization: per-channel sign binarization, bit packing,
commitment loss, and the factorized entropy regularizer.

Conventions: sign(0) = +1; channel i occupies bit i of the packed code
(LSB = channel 0). No codebook table exists; the "codebook" is the set of
2^d sign patterns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatch, CodeOutOfRange, ShapeMismatch
from .tape import (Tensor, _make, add, affine, log_clamped, mean_all,
                   mean_axes, mul, sigmoid, square, sub, sum_axes)


@dataclass(frozen=True)
class QuantizerConfig:
    d: int
    beta: float = 0.25
    entropy_weight: float = 0.1

    def __post_init__(self):
        if not 1 <= self.d <= 30:
            raise ChannelMismatch(f"token bit-width must be in [1, 30], got {self.d}")
        if self.beta < 0 or self.entropy_weight < 0:
            raise ChannelMismatch("loss weights must be non-negative")

    @property
    def codebook_size(self) -> int:
        return 1 << self.d


@dataclass
class TokenGrid:
    """T' x H' x W' grid of packed integer codes."""

    codes: np.ndarray
    d: int
    config_id: str = ""

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        if self.codes.ndim != 3:
            raise ShapeMismatch(f"token grid must be 3-D, got {self.codes.shape}")
        if not np.issubdtype(self.codes.dtype, np.integer):
            raise ShapeMismatch("token codes must be integers")
        if self.codes.size and (int(self.codes.min()) < 0
                                or int(self.codes.max()) >= (1 << self.d)):
            raise CodeOutOfRange(
                f"codes must lie in [0, 2^{self.d}); found "
                f"[{int(self.codes.min())}, {int(self.codes.max())}]")
        self.codes = self.codes.astype(np.uint32)

    @property
    def shape(self):
        return tuple(self.codes.shape)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a +-1 array whose last axis has length d into integer codes."""
    bits = np.asarray(bits)
    d = bits.shape[-1]
    if d > 30:
        raise CodeOutOfRange(f"cannot pack {d} bits into a 32-bit code")
    weights = (np.uint32(1) << np.arange(d, dtype=np.uint32))
    return ((bits > 0).astype(np.uint32) * weights).sum(axis=-1, dtype=np.uint32)


def unpack_bits(codes: np.ndarray, d: int) -> np.ndarray:
    """Expand integer codes into +-1 float vectors (inverse of pack_bits)."""
    codes = np.asarray(codes)
    if codes.size and (int(codes.min()) < 0 or int(codes.max()) >= (1 << d)):
        raise CodeOutOfRange(f"code out of range for d={d}")
    shifts = np.arange(d, dtype=np.uint32)
    bits = (codes[..., None].astype(np.uint32) >> shifts) & np.uint32(1)
    return (bits.astype(np.float32) * 2.0 - 1.0)


def quantize(y: Tensor, d: int | None = None) -> tuple[TokenGrid, Tensor]:
    """Binarize by sign and pack; e carries the straight-through gradient.

    The backward pass treats e as the identity in y, so whatever gradient the
    decoder sends to e flows into the encoder unchanged.
    """
    if y.data.ndim != 4:
        raise ShapeMismatch(f"quantize expects T,H,W,d input, got {y.data.shape}")
    if d is not None and y.data.shape[-1] != d:
        raise ChannelMismatch(
            f"input has {y.data.shape[-1]} channels, expected d={d}")
    d = y.data.shape[-1]
    e_data = np.where(y.data >= 0, 1.0, -1.0).astype(y.data.dtype)

    def bwd(out):
        def run():
            y.accumulate(out.grad)
        return run
    e = _make(e_data, (y,), bwd)
    grid = TokenGrid(codes=pack_bits(e_data), d=d)
    return grid, e


def vq_loss(y: Tensor, e: Tensor, beta: float) -> Tensor:
    """Commitment objective: mean over positions of
    ||sg[y] - e||^2 + beta * ||y - sg[e]||^2.

    Only the beta term carries gradient (into y); under LFQ there is no
    codebook for the first term to train, so it contributes value only.
    """
    if y.data.shape != e.data.shape:
        raise ShapeMismatch(f"y {y.data.shape} vs e {e.data.shape}")
    frozen = float(np.mean(np.sum((y.data - e.data) ** 2, axis=-1)))
    commit = mean_all(sum_axes(square(sub(y, e.detach())), (-1,)))
    return affine(commit, scale=beta, shift=frozen)


def _binary_entropy(p: Tensor) -> Tensor:
    q = affine(p, -1.0, 1.0)
    return affine(add(mul(p, log_clamped(p)), mul(q, log_clamped(q))), -1.0)


def entropy_loss(y: Tensor) -> Tensor:
    """Factorized bitwise entropy regularizer: per-sample entropy minus batch
    entropy of the soft bit probabilities sigma(2y).

    Low when each position is confident about its bits while the batch as a
    whole uses both signs of every bit; a collapsed batch scores higher than a
    balanced one.
    """
    if y.data.ndim != 4:
        raise ChannelMismatch(f"entropy_loss expects T,H,W,d input, got {y.data.shape}")
    p = sigmoid(affine(y, 2.0))
    per_sample = mean_all(sum_axes(_binary_entropy(p), (-1,)))
    p_bar = mean_axes(p, (0, 1, 2))
    batch = sum_axes(_binary_entropy(p_bar), (0,))
    return sub(per_sample, batch)
