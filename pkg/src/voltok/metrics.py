"""Reconstruction-quality and code-usage metrics.

All intensity metrics map normalized volumes onto [0, 1] via (x+1)/2 first,
so an MSE of 0.001 corresponds to a PSNR of 30 dB with peak 1.0. SSIM is the
volumetric form with a 7x7x7 Gaussian window (sigma 1.5, K1=0.01, K2=0.03,
L=1.0), averaged over all fully-interior window positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MixedBitWidth, ShapeMismatch
from .lfq import TokenGrid
from .volume import Volume

PSNR_INF = math.inf


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    unique_codes: int = 0
    perplexity: float = 0.0


def _unit_pair(a: Volume | np.ndarray, b: Volume | np.ndarray):
    x = a.data if isinstance(a, Volume) else np.asarray(a)
    y = b.data if isinstance(b, Volume) else np.asarray(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"volume shapes differ: {x.shape} vs {y.shape}")
    return ((x.astype(np.float64) + 1.0) / 2.0,
            (y.astype(np.float64) + 1.0) / 2.0)


def mse(a, b) -> float:
    x, y = _unit_pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b) -> float:
    """10*log10(1/mse) with peak 1.0; infinity sentinel when mse == 0."""
    m = mse(a, b)
    if m == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / m)


def _gauss1d(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def _local_mean(x: np.ndarray, w1: np.ndarray) -> np.ndarray:
    for axis in range(3):
        x = ndimage.correlate1d(x, w1, axis=axis, mode="constant")
    return x


def ssim(a, b, window: int = 7, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Volumetric SSIM averaged over positions whose window lies fully inside."""
    x, y = _unit_pair(a, b)
    if min(x.shape) < window:
        raise ShapeMismatch(
            f"all dims must be >= {window} for SSIM, got {x.shape}")
    w1 = _gauss1d(window, sigma)
    mu_x = _local_mean(x, w1)
    mu_y = _local_mean(y, w1)
    sxx = _local_mean(x * x, w1) - mu_x ** 2
    syy = _local_mean(y * y, w1) - mu_y ** 2
    sxy = _local_mean(x * y, w1) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    smap = num / den
    r = window // 2
    interior = smap[r:smap.shape[0] - r, r:smap.shape[1] - r, r:smap.shape[2] - r]
    return float(interior.mean())


def code_usage(grids) -> tuple[int, float]:
    """(unique code count, exp-entropy perplexity) over a stream of TokenGrids."""
    grids = list(grids)
    if not grids:
        return 0, 0.0
    d = grids[0].d
    counts = np.zeros(1 << d, dtype=np.int64)
    for g in grids:
        if not isinstance(g, TokenGrid):
            raise ShapeMismatch("code_usage expects TokenGrid inputs")
        if g.d != d:
            raise MixedBitWidth(f"mixed bit widths: {d} vs {g.d}")
        counts += np.bincount(g.codes.ravel(), minlength=1 << d)
    total = counts.sum()
    p = counts[counts > 0] / total
    entropy = float(-(p * np.log(p)).sum())
    return int((counts > 0).sum()), float(np.exp(entropy))


def report(original: Volume, reconstruction: Volume,
           grid: TokenGrid | None = None) -> MetricReport:
    unique, perp = code_usage([grid]) if grid is not None else (0, 0.0)
    return MetricReport(psnr=psnr(original, reconstruction),
                        ssim=ssim(original, reconstruction),
                        mse=mse(original, reconstruction),
                        unique_codes=unique, perplexity=perp)
