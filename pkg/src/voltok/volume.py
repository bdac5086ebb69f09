"""Volume I/O, HU preprocessing, and the seeded phantom generator.

On-disk format (RVOL): one UTF-8 header line

    RVOL1 {"shape":[D,H,W],"spacing":[sx,sy,sz],"domain":"HU"}\n

followed by D*H*W little-endian float32 values in row-major order
(D outermost, W innermost). save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    InvalidSpec,
    IoFailure,
    MalformedHeader,
    MissingFile,
    PayloadSizeMismatch,
)

DOMAIN_HU = "HU"
DOMAIN_NORMALIZED = "Normalized"
_MAGIC = "RVOL1"


@dataclass
class Volume:
    """A D x H x W scalar grid with voxel spacing and an intensity-domain tag."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    domain: str = DOMAIN_NORMALIZED

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise InvalidSpec(f"volume data must be 3-D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise InvalidSpec(f"volume dims must be >= 1, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InvalidSpec(f"spacing must be 3 positive values, got {self.spacing}")
        if self.domain not in (DOMAIN_HU, DOMAIN_NORMALIZED):
            raise InvalidSpec(f"unknown domain {self.domain!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass
class PreprocessSpec:
    """Clip bounds, target grid, and normalization flag for HU volumes.

    target_shape.D should be congruent to 1 mod 8 when the result is meant
    for tiled encoding; that is not enforced here because plain metric or
    storage use has no such constraint.
    """

    clip_lo: float = -1000.0
    clip_hi: float = 1000.0
    target_spacing: tuple[float, float, float] | None = None
    target_shape: tuple[int, int, int] | None = None
    normalize: bool = True

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise InvalidSpec(f"clip_lo must be < clip_hi, got [{self.clip_lo}, {self.clip_hi}]")
        if self.target_shape is not None and any(int(d) < 1 for d in self.target_shape):
            raise InvalidSpec(f"target_shape dims must be >= 1, got {self.target_shape}")
        if self.target_spacing is not None and any(s <= 0 for s in self.target_spacing):
            raise InvalidSpec(f"target_spacing must be positive, got {self.target_spacing}")


def _validate_domain_values(data: np.ndarray, domain: str, context: str) -> None:
    if domain == DOMAIN_NORMALIZED:
        lo, hi = float(data.min(initial=0.0)), float(data.max(initial=0.0))
        if lo < -1.0 or hi > 1.0:
            raise MalformedHeader(
                f"{context}: domain=Normalized but values span [{lo:g}, {hi:g}], outside [-1, 1]")


def save_volume(v: Volume, path: str | os.PathLike) -> None:
    """Write `v` in the RVOL format; load_volume inverts it bit-exactly."""
    header = _MAGIC + " " + json.dumps(
        {"shape": list(v.shape), "spacing": list(v.spacing), "domain": v.domain},
        separators=(",", ":")) + "\n"
    try:
        with open(path, "wb") as f:
            f.write(header.encode("utf-8"))
            f.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write volume to {path}: {exc}") from exc


def load_volume(path: str | os.PathLike) -> Volume:
    """Read an RVOL file, validating header, payload size, and domain bounds."""
    if not os.path.isfile(path):
        raise MissingFile(f"no such volume file: {path}")
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    nl = raw.find(b"\n")
    if nl < 0:
        raise MalformedHeader(f"{path}: missing header line")
    try:
        header_line = raw[:nl].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"{path}: header is not UTF-8") from exc
    if not header_line.startswith(_MAGIC + " "):
        raise MalformedHeader(f"{path}: bad magic, expected {_MAGIC!r}")
    try:
        meta = json.loads(header_line[len(_MAGIC) + 1:])
        shape = tuple(int(d) for d in meta["shape"])
        spacing = tuple(float(s) for s in meta["spacing"])
        domain = str(meta["domain"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"{path}: unparsable header ({exc})") from exc
    if len(shape) != 3 or min(shape) < 1:
        raise MalformedHeader(f"{path}: bad shape {shape}")
    if domain not in (DOMAIN_HU, DOMAIN_NORMALIZED):
        raise MalformedHeader(f"{path}: unknown domain {domain!r}")

    payload = raw[nl + 1:]
    expected = shape[0] * shape[1] * shape[2] * 4
    if len(payload) != expected:
        raise PayloadSizeMismatch(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for shape {shape}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    _validate_domain_values(data, domain, str(path))
    return Volume(data=data.copy(), spacing=spacing, domain=domain)


def _resample_trilinear(data: np.ndarray, in_spacing, out_spacing) -> np.ndarray:
    """Trilinear resample onto a grid with the requested spacing.

    Output samples are placed at pixel centers: out index i maps to input
    coordinate (i + 0.5) * (in_size / out_size) - 0.5, clamped at borders.
    An axis whose size is unchanged is sampled at exact integer coordinates,
    so it passes through untouched.
    """
    in_shape = data.shape
    out_shape = tuple(
        max(1, int(round(in_shape[a] * in_spacing[a] / out_spacing[a])))
        for a in range(3))
    if out_shape == tuple(in_shape):
        return data.astype(np.float32, copy=True)
    axes = [
        (np.arange(out_shape[a], dtype=np.float64) + 0.5) * (in_shape[a] / out_shape[a]) - 0.5
        for a in range(3)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    out = ndimage.map_coordinates(
        data.astype(np.float64), np.stack(grid), order=1, mode="nearest")
    return out.astype(np.float32)


def _crop_or_pad(data: np.ndarray, target_shape, pad_value: float) -> np.ndarray:
    """Center crop / symmetric constant-pad each axis to the target size."""
    out = data
    for a in range(3):
        size, want = out.shape[a], int(target_shape[a])
        if size > want:
            lo = (size - want) // 2
            sl = [slice(None)] * 3
            sl[a] = slice(lo, lo + want)
            out = out[tuple(sl)]
        elif size < want:
            before = (want - size) // 2
            after = want - size - before
            widths = [(0, 0)] * 3
            widths[a] = (before, after)
            out = np.pad(out, widths, constant_values=pad_value)
    return out


def preprocess(v: Volume, spec: PreprocessSpec) -> Volume:
    """Clip, resample, crop/pad, and optionally normalize an HU volume.

    Padding uses the clip floor (air). Normalization maps HU -> HU/1000,
    producing a Normalized-domain volume in [-1, 1].
    """
    if v.domain != DOMAIN_HU:
        raise InvalidSpec("preprocess expects an HU-domain volume")
    data = np.clip(v.data, spec.clip_lo, spec.clip_hi).astype(np.float32)
    spacing = v.spacing
    if spec.target_spacing is not None:
        data = _resample_trilinear(data, v.spacing, spec.target_spacing)
        # interpolation may overshoot clip bounds by rounding; re-clip
        data = np.clip(data, spec.clip_lo, spec.clip_hi)
        spacing = tuple(spec.target_spacing)
    if spec.target_shape is not None:
        data = _crop_or_pad(data, spec.target_shape, pad_value=spec.clip_lo)
    if spec.normalize:
        data = (data / 1000.0).astype(np.float32)
        return Volume(data=data, spacing=spacing, domain=DOMAIN_NORMALIZED)
    return Volume(data=data, spacing=spacing, domain=DOMAIN_HU)


def make_phantom(seed: int, shape: tuple[int, int, int],
                 spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Volume:
    """Deterministic synthetic volume: drifting soft ellipsoids on a -1 background.

    Same (seed, shape) always yields bit-identical output. 2-5 ellipsoids with
    intensities in [-0.2, 1.0] drift smoothly across slices (under one voxel
    per slice); uniform noise of amplitude 0.02 is added and the result is
    clipped to [-1, 1].
    """
    D, H, W = (int(s) for s in shape)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), D, H, W]))
    vol = np.full((D, H, W), -1.0, dtype=np.float64)

    n_ell = int(rng.integers(2, 6))
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    zz = np.arange(D, dtype=np.float64)
    for _ in range(n_ell):
        cy0 = rng.uniform(0.25 * H, 0.75 * H)
        cx0 = rng.uniform(0.25 * W, 0.75 * W)
        cz = rng.uniform(0.2 * D, 0.8 * D)
        ry = rng.uniform(0.08 * H, 0.3 * H)
        rx = rng.uniform(0.08 * W, 0.3 * W)
        rz = rng.uniform(max(1.0, 0.15 * D), max(2.0, 0.45 * D))
        amp = rng.uniform(-0.2, 1.0)
        # sinusoidal in-plane drift; |d center / d slice| <= drift_step <= 0.9 voxel
        drift_step = rng.uniform(0.1, 0.9)
        phase_y, phase_x = rng.uniform(0.0, 2 * np.pi, size=2)
        period = max(D, 8)
        swing = drift_step * period / (2 * np.pi)
        cy = cy0 + swing * np.sin(2 * np.pi * zz / period + phase_y)
        cx = cx0 + swing * np.sin(2 * np.pi * zz / period + phase_x)
        for d in range(D):
            r2 = (((yy - cy[d]) / ry) ** 2 + ((xx - cx[d]) / rx) ** 2
                  + ((zz[d] - cz) / rz) ** 2)
            # soft edge: full intensity inside r2<=0.8, linear ramp to zero at 1.0
            mask = np.clip((1.0 - r2) / 0.2, 0.0, 1.0)
            vol[d] = np.maximum(vol[d], -1.0 + (amp + 1.0) * mask)

    vol += rng.uniform(-0.02, 0.02, size=vol.shape)
    vol = np.clip(vol, -1.0, 1.0)
    return Volume(data=vol.astype(np.float32), spacing=spacing,
                  domain=DOMAIN_NORMALIZED)
