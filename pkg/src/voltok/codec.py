"""Encoder / decoder / discriminator assembly and the token coverage laws.

Two compression variants:
  * c8  - two spatial and two temporal stride-2 convolutions after the
          wavelet front-end: 8x per spatial axis, 8x temporal overall.
  * c16 - one extra spatial stride-2 stage: 16x spatial, 8x temporal.

Token-count law for D = 8n+1 input slices: the wavelet yields F = 4n+1
frames and the two temporal stride-2 stages leave T' = n+1 = 1 + (D-1)/8
tokens. Encoder coverage: token m depends on slices <= cov(m), cov(1) = 1,
cov(m) = 8(m-1)+1. The decoder emits 4T' frames and trims the tail to
F = 4(T'-1)+1, so reconstructed frame f draws only on tokens <= ceil(f/4).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ParityMismatch, ShapeMismatch
from .haar import PAD_CAUSAL_REPLICATE, WaveletVolume
from .layers import (FrameGroupNorm, ResidualBlock, SpatialConv, TemporalConv,
                     TemporalTransposedConv)
from .lfq import TokenGrid, quantize, unpack_bits
from .tape import Tensor, leaky_relu, reshape, silu, slice_axis, upsample2x_spatial

VARIANT_C8 = "c8"
VARIANT_C16 = "c16"


@dataclass(frozen=True)
class CodecConfig:
    variant: str = VARIANT_C8
    base_channels: int = 32
    res_blocks_per_stage: int = 1
    k: int = 3
    d: int = 8
    temporal_k: int | None = None       # strided temporal convs; defaults to k
    res_temporal_k: int | None = None   # temporal convs inside res blocks
    groups: int = 8

    def __post_init__(self):
        if self.variant not in (VARIANT_C8, VARIANT_C16):
            raise ShapeMismatch(f"unknown variant {self.variant!r}")
        if not 1 <= self.d <= 30:
            raise ShapeMismatch(f"d must be in [1, 30], got {self.d}")

    @property
    def kt(self) -> int:
        return self.k if self.temporal_k is None else self.temporal_k

    @property
    def krt(self) -> int:
        return self.k if self.res_temporal_k is None else self.res_temporal_k

    @property
    def spatial_factor(self) -> int:
        """Total spatial reduction including the 2x wavelet step."""
        return 8 if self.variant == VARIANT_C8 else 16

    def config_id(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def token_grid_shape(cfg: CodecConfig, D: int, H: int, W: int) -> tuple[int, int, int]:
    """Shape of the token grid for a D x H x W volume (stride arithmetic only)."""
    if D % 8 != 1:
        raise ParityMismatch(f"volume depth must be 1 mod 8, got {D}")
    sf = cfg.spatial_factor
    if H % sf or W % sf:
        raise ShapeMismatch(f"H, W must be divisible by {sf}, got {H}x{W}")
    t = 1 + (D - 1) // 8
    return (t, H // sf, W // sf)


def encoder_coverage(m: int) -> int:
    """Largest input slice index allowed to influence token m (1-based)."""
    return 1 if m <= 1 else 8 * (m - 1) + 1


def decoder_coverage(f: int) -> int:
    """Largest token index allowed to influence reconstructed frame f (1-based)."""
    return 1 + (f - 1 + 3) // 4


class Encoder:
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        C, k, g = cfg.base_channels, cfg.k, cfg.groups
        N = cfg.res_blocks_per_stage
        self.cfg = cfg
        self.stem = SpatialConv(8, C, k, 1, rng, dtype=dtype)
        self.blocks: list[tuple[str, object]] = []
        widths = [(C, 2 * C), (2 * C, 4 * C)]
        for i, (ci, co) in enumerate(widths):
            self._add(f"s{i}.down_s", SpatialConv(ci, co, k, 2, rng, dtype=dtype))
            for j in range(N):
                self._add(f"s{i}.res_a{j}",
                          ResidualBlock(co, co, k, cfg.krt, rng, g, dtype=dtype))
            self._add(f"s{i}.down_t",
                      TemporalConv(co, co, cfg.kt, 2, rng, dtype=dtype))
            for j in range(N):
                self._add(f"s{i}.res_b{j}",
                          ResidualBlock(co, co, k, cfg.krt, rng, g, dtype=dtype))
        if cfg.variant == VARIANT_C16:
            self._add("s2.down_s", SpatialConv(4 * C, 4 * C, k, 2, rng, dtype=dtype))
            for j in range(N):
                self._add(f"s2.res_a{j}",
                          ResidualBlock(4 * C, 4 * C, k, cfg.krt, rng, g, dtype=dtype))
        self.head_norm = FrameGroupNorm(4 * C, g, dtype=dtype)
        self.head = SpatialConv(4 * C, cfg.d, 1, 1, rng, dtype=dtype)

    def _add(self, name: str, mod) -> None:
        self.blocks.append((name, mod))

    def __call__(self, w: Tensor) -> Tensor:
        h = self.stem(w)
        for _, mod in self.blocks:
            h = mod(h)
        return self.head(silu(self.head_norm(h)))

    def named_params(self):
        out = [("stem." + n, t) for n, t in self.stem.named_params()]
        for name, mod in self.blocks:
            out += [(f"{name}.{n}", t) for n, t in mod.named_params()]
        out += [("head_norm." + n, t) for n, t in self.head_norm.named_params()]
        out += [("head." + n, t) for n, t in self.head.named_params()]
        return out


class Decoder:
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        C, k, g = cfg.base_channels, cfg.k, cfg.groups
        N = cfg.res_blocks_per_stage
        self.cfg = cfg
        self.stem = SpatialConv(cfg.d, 4 * C, 1, 1, rng, dtype=dtype)
        self.blocks: list[tuple[str, object]] = []
        if cfg.variant == VARIANT_C16:
            for j in range(N):
                self._add(f"u2.res_a{j}",
                          ResidualBlock(4 * C, 4 * C, k, cfg.krt, rng, g, dtype=dtype))
            self._add("u2.up_s", ("upsample", SpatialConv(4 * C, 4 * C, k, 1, rng, dtype=dtype)))
        widths = [(4 * C, 2 * C), (2 * C, C)]
        for i, (ci, co) in enumerate(widths):
            for j in range(N):
                self._add(f"u{i}.res_a{j}",
                          ResidualBlock(ci, ci, k, cfg.krt, rng, g, dtype=dtype))
            self._add(f"u{i}.up_t", TemporalTransposedConv(ci, ci, cfg.kt, rng, dtype=dtype))
            for j in range(N):
                self._add(f"u{i}.res_b{j}",
                          ResidualBlock(ci, ci, k, cfg.krt, rng, g, dtype=dtype))
            self._add(f"u{i}.up_s", ("upsample", SpatialConv(ci, co, k, 1, rng, dtype=dtype)))
        self.head_norm = FrameGroupNorm(C, g, dtype=dtype)
        self.head = SpatialConv(C, 8, k, 1, rng, dtype=dtype)

    def _add(self, name: str, mod) -> None:
        self.blocks.append((name, mod))

    def __call__(self, e: Tensor) -> Tensor:
        h = self.stem(e)
        for _, mod in self.blocks:
            if isinstance(mod, tuple):  # ("upsample", conv)
                h = mod[1](upsample2x_spatial(h))
            else:
                h = mod(h)
        h = self.head(silu(self.head_norm(h)))
        frames = 4 * (e.data.shape[0] - 1) + 1
        return slice_axis(h, 0, 0, frames)

    def named_params(self):
        out = [("stem." + n, t) for n, t in self.stem.named_params()]
        for name, mod in self.blocks:
            real = mod[1] if isinstance(mod, tuple) else mod
            out += [(f"{name}.{n}", t) for n, t in real.named_params()]
        out += [("head_norm." + n, t) for n, t in self.head_norm.named_params()]
        out += [("head." + n, t) for n, t in self.head.named_params()]
        return out


class Discriminator:
    """Strided non-causal conv stack over CT-domain volumes; one logit per
    receptive patch. No normalization; final layer zero-initialized."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        C, k = cfg.base_channels, cfg.k
        self.cfg = cfg
        chans = [1, C, 2 * C, 4 * C]
        self.stages = []
        for ci, co in zip(chans[:-1], chans[1:]):
            self.stages.append((
                SpatialConv(ci, co, k, 2, rng, dtype=dtype),
                TemporalConv(co, co, k, 2, rng, padding="same", dtype=dtype),
            ))
        self.head = SpatialConv(4 * C, 1, 1, 1, rng, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv_s, conv_t in self.stages:
            h = leaky_relu(conv_t(conv_s(h)), 0.2)
        return self.head(h)

    def named_params(self):
        out = []
        for i, (conv_s, conv_t) in enumerate(self.stages):
            out += [(f"l{i}.s.{n}", t) for n, t in conv_s.named_params()]
            out += [(f"l{i}.t.{n}", t) for n, t in conv_t.named_params()]
        out += [("head." + n, t) for n, t in self.head.named_params()]
        return out


class Codec:
    """Bundles E, G, D and their parameter registry for one CodecConfig."""

    def __init__(self, cfg: CodecConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        root = np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 0xC0DEC])
        enc_rng, dec_rng, disc_rng = (np.random.default_rng(s)
                                      for s in root.spawn(3))
        self.encoder = Encoder(cfg, enc_rng, dtype)
        self.decoder = Decoder(cfg, dec_rng, dtype)
        self.disc = Discriminator(cfg, disc_rng, dtype)
        self.config_id = cfg.config_id()

    def named_params(self, parts=("encoder", "decoder", "disc")):
        out = []
        if "encoder" in parts:
            out += [("encoder." + n, t) for n, t in self.encoder.named_params()]
        if "decoder" in parts:
            out += [("decoder." + n, t) for n, t in self.decoder.named_params()]
        if "disc" in parts:
            out += [("disc." + n, t) for n, t in self.disc.named_params()]
        return out

    def reinit_discriminator(self, seed: int) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 0xD15C]))
        self.disc = Discriminator(self.cfg, rng, self.dtype)


def _check_wavelet_input(cfg: CodecConfig, w_data: np.ndarray) -> None:
    F, H2, W2, C = w_data.shape
    if C != 8:
        raise ShapeMismatch(f"wavelet input must have 8 channels, got {C}")
    if F % 4 != 1:
        raise ParityMismatch(f"frame count must be 1 mod 4, got {F}")
    need = cfg.spatial_factor // 2
    if H2 % need or W2 % need:
        raise ShapeMismatch(
            f"wavelet spatial dims must be divisible by {need}, got {H2}x{W2}")


def encode(codec: Codec, w: WaveletVolume | Tensor) -> tuple[Tensor, TokenGrid]:
    """Run the causal encoder and quantize: returns (pre-quantization latents,
    packed token grid). Accepts a WaveletVolume or an on-tape Tensor."""
    x = w if isinstance(w, Tensor) else Tensor(np.asarray(w.data, dtype=codec.dtype))
    _check_wavelet_input(codec.cfg, x.data)
    y = codec.encoder(x)
    grid, _ = quantize(y, codec.cfg.d)
    grid.config_id = codec.config_id
    return y, grid


def decode(codec: Codec, tokens: TokenGrid | Tensor) -> WaveletVolume:
    """Decode packed tokens or their +-1 expansions back to the wavelet domain."""
    e = tokens_to_e(codec, tokens)
    out = codec.decoder(e)
    F = out.data.shape[0]
    return WaveletVolume(data=out.data, pad_mode=PAD_CAUSAL_REPLICATE,
                         original_D=2 * F - 1)


def tokens_to_e(codec: Codec, tokens: TokenGrid | Tensor) -> Tensor:
    if isinstance(tokens, Tensor):
        e = tokens
        if e.data.shape[-1] != codec.cfg.d:
            raise ShapeMismatch(
                f"expansion has {e.data.shape[-1]} channels, config d={codec.cfg.d}")
        return e
    if tokens.d != codec.cfg.d:
        raise ShapeMismatch(f"token grid d={tokens.d} but config d={codec.cfg.d}")
    return Tensor(unpack_bits(tokens.codes, tokens.d).astype(codec.dtype))


def discriminate(codec: Codec, x: Tensor | np.ndarray) -> Tensor:
    """Patch logits for a normalized-domain volume (D x H x W or D,H,W,1)."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=codec.dtype))
    if x.data.ndim == 3:
        x = reshape(x, (*x.data.shape, 1))
    if x.data.ndim != 4 or x.data.shape[-1] != 1:
        raise ShapeMismatch(f"discriminator expects D,H,W(,1), got {x.data.shape}")
    return codec.disc(x)
