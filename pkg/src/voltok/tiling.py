"""Overlapping-window encoding and the two inference modes.

A volume of D = 8T+1 slices is split into T windows of 9 slices,
[(1,9), (9,17), ..., (D-8, D)], consecutive windows sharing exactly one
slice. Each window is wavelet-transformed independently (causal-replicate
padding) and encoded to two temporal tokens; window 1 keeps both, every later
window keeps only its second token, which covers all 9 of its slices. The
retained sequence has 1 + T tokens and is decoded in a single pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import haar
from .codec import Codec, decode, encode
from .errors import InvalidLength, InvalidSpec
from .haar import PAD_CAUSAL_REPLICATE, haar_forward
from .lfq import TokenGrid, quantize
from .tape import Tensor, _make, concat, slice_axis
from .volume import DOMAIN_NORMALIZED, Volume


@dataclass
class WindowPlan:
    windows: list[tuple[int, int]]       # inclusive 1-based slice ranges
    retention: list[list[bool]]          # per-window token keep mask

    @property
    def retained_tokens(self) -> int:
        return sum(sum(keep) for keep in self.retention)


def plan_windows(D: int) -> WindowPlan:
    """Deterministic window/retention plan for a D-slice volume."""
    if D < 9 or D % 8 != 1:
        raise InvalidLength(
            f"tiled encoding needs D >= 9 with D = 1 mod 8, got D={D}")
    T = (D - 1) // 8
    windows = [(8 * t + 1, 8 * t + 9) for t in range(T)]
    retention = [[True, True]] + [[False, True] for _ in range(T - 1)]
    return WindowPlan(windows=windows, retention=retention)


def _require_normalized(v: Volume) -> None:
    if v.domain != DOMAIN_NORMALIZED:
        raise InvalidSpec("encoding expects a normalized-domain volume")


def window_latents(codec: Codec, vol_data: np.ndarray) -> tuple[Tensor, Tensor, TokenGrid]:
    """Per-window encode with retention; gradients flow through every window.

    Returns (retained pre-quantization latents, retained +-1 expansions,
    packed token grid), all concatenated along the token axis.
    """
    plan = plan_windows(vol_data.shape[0])
    ys, es, codes = [], [], []
    for (s, e_), keep in zip(plan.windows, plan.retention):
        w = haar_forward(vol_data[s - 1:e_], PAD_CAUSAL_REPLICATE)
        y, grid = encode(codec, w)
        _, e = quantize(y, codec.cfg.d)
        lo = keep.index(True)
        ys.append(slice_axis(y, 0, lo, len(keep)))
        es.append(slice_axis(e, 0, lo, len(keep)))
        codes.append(grid.codes[lo:len(keep)])
    grid = TokenGrid(codes=np.concatenate(codes, axis=0), d=codec.cfg.d,
                     config_id=codec.config_id)
    return concat(ys, axis=0), concat(es, axis=0), grid


def tiled_encode(codec: Codec, v: Volume) -> TokenGrid:
    """Overlapping-window encoding; retained tokens concatenated in window order."""
    _require_normalized(v)
    _, _, grid = window_latents(codec, v.data)
    return grid


def one_shot_encode(codec: Codec, v: Volume) -> TokenGrid:
    """Encode the whole volume in a single causal pass."""
    _require_normalized(v)
    D = v.data.shape[0]
    if D % 8 != 1:
        raise InvalidLength(f"one-shot encoding needs D = 1 mod 8, got D={D}")
    w = haar_forward(v.data, PAD_CAUSAL_REPLICATE)
    _, grid = encode(codec, w)
    return grid


def haar_inverse_op(w: Tensor, original_D: int) -> Tensor:
    """Differentiable wavelet inversion (causal-replicate convention)."""
    out_data = haar.inverse_data(w.data, PAD_CAUSAL_REPLICATE, original_D)

    def bwd(out):
        def run():
            w.accumulate(haar.inverse_adjoint(out.grad, PAD_CAUSAL_REPLICATE))
        return run
    return _make(out_data, (w,), bwd)


def reconstruct(codec: Codec, grid: TokenGrid | Tensor, clamp: bool = False) -> Volume:
    """Single decoder pass over the full token sequence, then wavelet inversion."""
    wv = decode(codec, grid)
    x = haar.inverse_data(wv.data, wv.pad_mode, wv.original_D)
    if clamp:
        x = np.clip(x, -1.0, 1.0)
    return Volume(data=x.astype(np.float32), domain=DOMAIN_NORMALIZED)


def reconstruct_tensor(codec: Codec, e: Tensor) -> Tensor:
    """Differentiable reconstruction from +-1 expansions (training path)."""
    wav = codec.decoder(e)
    F = wav.data.shape[0]
    return haar_inverse_op(wav, 2 * F - 1)
