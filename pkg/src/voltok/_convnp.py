"""NumPy reference kernels for the factorized convolutions.

Each kernel lowers to a fixed-order sequence of per-tap GEMMs, so results are
deterministic and the compiled backend can be validated against these.
Layouts: activations (T, H, W, C); spatial weights (k, k, Cin, Cout);
temporal weights (k, Cin, Cout); transposed temporal weights (k, 2, Cin, Cout)
where axis 1 is the output phase.
"""

from __future__ import annotations

import numpy as np


def spatial_fwd(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    T, H, W, Ci = x.shape
    k = w.shape[0]
    p = k // 2
    s = stride
    Ho, Wo = H // s, W // s
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    y = np.zeros((T, Ho, Wo, w.shape[3]), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            seg = xp[:, a:a + s * (Ho - 1) + 1:s, b:b + s * (Wo - 1) + 1:s, :]
            y += np.ascontiguousarray(seg).reshape(-1, Ci).dot(w[a, b]).reshape(y.shape)
    return y


def spatial_bwd_x(gy: np.ndarray, w: np.ndarray, stride: int,
                  x_shape: tuple) -> np.ndarray:
    T, H, W, Ci = x_shape
    k = w.shape[0]
    p = k // 2
    s = stride
    Ho, Wo = gy.shape[1], gy.shape[2]
    gxp = np.zeros((T, H + 2 * p, W + 2 * p, Ci), dtype=gy.dtype)
    gy2 = np.ascontiguousarray(gy).reshape(-1, w.shape[3])
    for a in range(k):
        for b in range(k):
            contrib = gy2.dot(w[a, b].T).reshape(T, Ho, Wo, Ci)
            gxp[:, a:a + s * (Ho - 1) + 1:s, b:b + s * (Wo - 1) + 1:s, :] += contrib
    return gxp[:, p:p + H, p:p + W, :] if p else gxp


def spatial_bwd_w(x: np.ndarray, gy: np.ndarray, stride: int, k: int) -> np.ndarray:
    T, H, W, Ci = x.shape
    Co = gy.shape[3]
    p = k // 2
    s = stride
    Ho, Wo = gy.shape[1], gy.shape[2]
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    gy2 = np.ascontiguousarray(gy).reshape(-1, Co)
    gw = np.zeros((k, k, Ci, Co), dtype=gy.dtype)
    for a in range(k):
        for b in range(k):
            seg = xp[:, a:a + s * (Ho - 1) + 1:s, b:b + s * (Wo - 1) + 1:s, :]
            gw[a, b] = np.ascontiguousarray(seg).reshape(-1, Ci).T.dot(gy2)
    return gw


def temporal_fwd(x: np.ndarray, w: np.ndarray, stride: int,
                 pad_left: int, pad_right: int) -> np.ndarray:
    T, H, W, Ci = x.shape
    k = w.shape[0]
    s = stride
    To = (T + pad_left + pad_right - k) // s + 1
    xp = np.pad(x, ((pad_left, pad_right), (0, 0), (0, 0), (0, 0))) \
        if (pad_left or pad_right) else x
    y = np.zeros((To, H, W, w.shape[-1]), dtype=x.dtype)
    for i in range(k):
        seg = xp[i:i + s * (To - 1) + 1:s]
        y += np.ascontiguousarray(seg).reshape(-1, Ci).dot(w[i]).reshape(y.shape)
    return y


def temporal_bwd_x(gy: np.ndarray, w: np.ndarray, stride: int,
                   pad_left: int, pad_right: int, x_shape: tuple) -> np.ndarray:
    T, H, W, Ci = x_shape
    k = w.shape[0]
    s = stride
    To = gy.shape[0]
    gxp = np.zeros((T + pad_left + pad_right, H, W, Ci), dtype=gy.dtype)
    gy2 = np.ascontiguousarray(gy).reshape(-1, w.shape[-1])
    for i in range(k):
        contrib = gy2.dot(w[i].T).reshape(To, H, W, Ci)
        gxp[i:i + s * (To - 1) + 1:s] += contrib
    return gxp[pad_left:pad_left + T]


def temporal_bwd_w(x: np.ndarray, gy: np.ndarray, stride: int,
                   pad_left: int, pad_right: int, k: int) -> np.ndarray:
    T, H, W, Ci = x.shape
    Co = gy.shape[3]
    s = stride
    To = gy.shape[0]
    xp = np.pad(x, ((pad_left, pad_right), (0, 0), (0, 0), (0, 0))) \
        if (pad_left or pad_right) else x
    gy2 = np.ascontiguousarray(gy).reshape(-1, Co)
    gw = np.zeros((k, Ci, Co), dtype=gy.dtype)
    for i in range(k):
        seg = xp[i:i + s * (To - 1) + 1:s]
        gw[i] = np.ascontiguousarray(seg).reshape(-1, Ci).T.dot(gy2)
    return gw


def transposed_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Causal stride-2 upsampling: out[f] = sum_i x[f//2 - i] @ w[i, f%2]."""
    T, H, W, Ci = x.shape
    k = w.shape[0]
    Co = w.shape[3]
    x2 = np.ascontiguousarray(x).reshape(-1, Ci)
    y = np.zeros((2 * T, H, W, Co), dtype=x.dtype)
    for ph in (0, 1):
        acc = np.zeros((T, H, W, Co), dtype=x.dtype)
        for i in range(k):
            if i >= T:
                break
            contrib = x2[:(T - i) * H * W].dot(w[i, ph]).reshape(T - i, H, W, Co)
            acc[i:] += contrib
        y[ph::2] = acc
    return y


def transposed_bwd_x(gy: np.ndarray, w: np.ndarray, x_shape: tuple) -> np.ndarray:
    T, H, W, Ci = x_shape
    k = w.shape[0]
    Co = w.shape[3]
    gx = np.zeros((T, H, W, Ci), dtype=gy.dtype)
    for ph in (0, 1):
        g_ph = np.ascontiguousarray(gy[ph::2]).reshape(-1, Co)
        for i in range(k):
            if i >= T:
                break
            contrib = g_ph[i * H * W:].dot(w[i, ph].T).reshape(T - i, H, W, Ci)
            gx[:T - i] += contrib
    return gx


def transposed_bwd_w(x: np.ndarray, gy: np.ndarray, k: int) -> np.ndarray:
    T, H, W, Ci = x.shape
    Co = gy.shape[3]
    x2 = np.ascontiguousarray(x).reshape(-1, Ci)
    gw = np.zeros((k, 2, Ci, Co), dtype=gy.dtype)
    for ph in (0, 1):
        g_ph = np.ascontiguousarray(gy[ph::2]).reshape(-1, Co)
        for i in range(k):
            if i >= T:
                break
            gw[i, ph] = x2[:(T - i) * H * W].T.dot(g_ph[i * H * W:])
    return gw
