"""Kernel backend selection.

The hot convolution kernels exist twice: a compiled Cython extension
(voltok._convkern) and the NumPy reference (voltok._convnp). The extension is
preferred when importable; set VOLTOK_BACKEND=numpy|cython to force one.
float64 calls always take the NumPy path (the extension is float32-only;
float64 is used by gradient checking, not training).
"""

from __future__ import annotations

import os

import numpy as np

from . import _convnp

_FORCED = os.environ.get("VOLTOK_BACKEND", "auto").lower()
_ext = None
if _FORCED in ("auto", "cython"):
    try:
        from . import _convkern as _ext  # type: ignore[no-redef]
    except ImportError:
        _ext = None
if _FORCED == "cython" and _ext is None:
    raise ImportError("VOLTOK_BACKEND=cython but the compiled extension is unavailable")


def backend_name() -> str:
    return "cython" if _ext is not None else "numpy"


def _use_ext(*arrays: np.ndarray) -> bool:
    return _ext is not None and all(a.dtype == np.float32 for a in arrays)


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def spatial_fwd(x, w, stride):
    if _use_ext(x, w):
        return _ext.spatial_fwd(_c(x), _c(w), stride)
    return _convnp.spatial_fwd(x, w, stride)


def spatial_bwd_x(gy, w, stride, x_shape):
    if _use_ext(gy, w):
        return _ext.spatial_bwd_x(_c(gy), _c(w), stride, x_shape[1], x_shape[2])
    return _convnp.spatial_bwd_x(gy, w, stride, x_shape)


def spatial_bwd_w(x, gy, stride, k):
    # weight-gradient reductions stay on the GEMM path in both backends
    return _convnp.spatial_bwd_w(x, gy, stride, k)


def temporal_fwd(x, w, stride, pad_left, pad_right):
    if _use_ext(x, w):
        return _ext.temporal_fwd(_c(x), _c(w), stride, pad_left, pad_right)
    return _convnp.temporal_fwd(x, w, stride, pad_left, pad_right)


def temporal_bwd_x(gy, w, stride, pad_left, pad_right, x_shape):
    if _use_ext(gy, w):
        return _ext.temporal_bwd_x(_c(gy), _c(w), stride, pad_left, pad_right,
                                   x_shape[0])
    return _convnp.temporal_bwd_x(gy, w, stride, pad_left, pad_right, x_shape)


def temporal_bwd_w(x, gy, stride, pad_left, pad_right, k):
    return _convnp.temporal_bwd_w(x, gy, stride, pad_left, pad_right, k)


def transposed_fwd(x, w):
    if _use_ext(x, w):
        return _ext.transposed_fwd(_c(x), _c(w))
    return _convnp.transposed_fwd(x, w)


def transposed_bwd_x(gy, w, x_shape):
    if _use_ext(gy, w):
        return _ext.transposed_bwd_x(_c(gy), _c(w), x_shape[0])
    return _convnp.transposed_bwd_x(gy, w, x_shape)


def transposed_bwd_w(x, gy, k):
    return _convnp.transposed_bwd_w(x, gy, k)
