# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 kernels for the factorized convolutions.

Gather-style loops: every output element is written by exactly one thread
with a fixed inner reduction order, so results are bit-deterministic and
agree with the NumPy reference kernels up to float32 reassociation.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()

ctypedef cnp.float32_t f32


def spatial_fwd(f32[:, :, :, ::1] x, f32[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t T = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], Co = w.shape[3]
    cdef Py_ssize_t p = k // 2, s = stride
    cdef Py_ssize_t Ho = H // s, Wo = W // s
    out = np.zeros((T, Ho, Wo, Co), dtype=np.float32)
    cdef f32[:, :, :, ::1] y = out
    cdef Py_ssize_t idx, t, oy, ox, a, b, iy, ix, ci, co
    cdef f32 xv
    for idx in prange(T * Ho, nogil=True, schedule='static'):
        t = idx // Ho
        oy = idx % Ho
        for ox in range(Wo):
            for a in range(k):
                iy = oy * s + a - p
                if iy < 0 or iy >= H:
                    continue
                for b in range(k):
                    ix = ox * s + b - p
                    if ix < 0 or ix >= W:
                        continue
                    for ci in range(Ci):
                        xv = x[t, iy, ix, ci]
                        for co in range(Co):
                            y[t, oy, ox, co] += xv * w[a, b, ci, co]
    return out


def spatial_bwd_x(f32[:, :, :, ::1] gy, f32[:, :, :, ::1] w, int stride,
                  Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t T = gy.shape[0], Ho = gy.shape[1], Wo = gy.shape[2], Co = gy.shape[3]
    cdef Py_ssize_t k = w.shape[0], Ci = w.shape[2]
    cdef Py_ssize_t p = k // 2, s = stride
    out = np.zeros((T, H, W, Ci), dtype=np.float32)
    cdef f32[:, :, :, ::1] gx = out
    # transpose to (k, k, Co, Ci) so the inner accumulation is elementwise
    # over contiguous ci (vectorizable without reassociation)
    cdef f32[:, :, :, ::1] wt = np.ascontiguousarray(np.transpose(w, (0, 1, 3, 2)))
    cdef Py_ssize_t idx, t, iy, ix, a, b, ty, tx, oy, ox, ci, co
    cdef f32 gv
    for idx in prange(T * H, nogil=True, schedule='static'):
        t = idx // H
        iy = idx % H
        for ix in range(W):
            for a in range(k):
                ty = iy + p - a
                if ty < 0 or ty % s != 0:
                    continue
                oy = ty // s
                if oy >= Ho:
                    continue
                for b in range(k):
                    tx = ix + p - b
                    if tx < 0 or tx % s != 0:
                        continue
                    ox = tx // s
                    if ox >= Wo:
                        continue
                    for co in range(Co):
                        gv = gy[t, oy, ox, co]
                        for ci in range(Ci):
                            gx[t, iy, ix, ci] += gv * wt[a, b, co, ci]
    return out


def temporal_fwd(f32[:, :, :, ::1] x, f32[:, :, ::1] w, int stride,
                 int pad_left, int pad_right):
    cdef Py_ssize_t T = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], Co = w.shape[2]
    cdef Py_ssize_t s = stride
    cdef Py_ssize_t To = (T + pad_left + pad_right - k) // s + 1
    cdef Py_ssize_t HW = H * W
    out = np.zeros((To, H, W, Co), dtype=np.float32)
    cdef f32[:, :, :, ::1] y = out
    cdef f32[:, ::1] x2 = np.asarray(x).reshape(T * HW, Ci)
    cdef f32[:, ::1] y2 = out.reshape(To * HW, Co)
    cdef Py_ssize_t idx, o, pix, i, j, ci, co
    cdef f32 xv
    for idx in prange(To * HW, nogil=True, schedule='static'):
        o = idx // HW
        pix = idx % HW
        for i in range(k):
            j = o * s + i - pad_left
            if j < 0 or j >= T:
                continue
            for ci in range(Ci):
                xv = x2[j * HW + pix, ci]
                for co in range(Co):
                    y2[idx, co] += xv * w[i, ci, co]
    return out


def temporal_bwd_x(f32[:, :, :, ::1] gy, f32[:, :, ::1] w, int stride,
                   int pad_left, int pad_right, Py_ssize_t T):
    cdef Py_ssize_t To = gy.shape[0], H = gy.shape[1], W = gy.shape[2], Co = gy.shape[3]
    cdef Py_ssize_t k = w.shape[0], Ci = w.shape[1]
    cdef Py_ssize_t s = stride
    cdef Py_ssize_t HW = H * W
    out = np.zeros((T, H, W, Ci), dtype=np.float32)
    cdef f32[:, ::1] gx2 = out.reshape(T * HW, Ci)
    cdef f32[:, ::1] gy2 = np.asarray(gy).reshape(To * HW, Co)
    cdef f32[:, :, ::1] wt = np.ascontiguousarray(np.transpose(w, (0, 2, 1)))
    cdef Py_ssize_t idx, j, pix, i, jp, o, ci, co
    cdef f32 gv
    for idx in prange(T * HW, nogil=True, schedule='static'):
        j = idx // HW
        pix = idx % HW
        jp = j + pad_left
        for i in range(k):
            if (jp - i) % s != 0:
                continue
            o = (jp - i) // s
            if o < 0 or o >= To:
                continue
            for co in range(Co):
                gv = gy2[o * HW + pix, co]
                for ci in range(Ci):
                    gx2[idx, ci] += gv * wt[i, co, ci]
    return out


def transposed_fwd(f32[:, :, :, ::1] x, f32[:, :, :, ::1] w):
    cdef Py_ssize_t T = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], Co = w.shape[3]
    cdef Py_ssize_t HW = H * W
    cdef Py_ssize_t To = 2 * T
    out = np.zeros((To, H, W, Co), dtype=np.float32)
    cdef f32[:, ::1] y2 = out.reshape(To * HW, Co)
    cdef f32[:, ::1] x2 = np.asarray(x).reshape(T * HW, Ci)
    cdef Py_ssize_t idx, f, pix, ph, base, i, j, ci, co
    cdef f32 xv
    for idx in prange(To * HW, nogil=True, schedule='static'):
        f = idx // HW
        pix = idx % HW
        ph = f % 2
        base = f // 2
        for i in range(k):
            j = base - i
            if j < 0:
                break
            for ci in range(Ci):
                xv = x2[j * HW + pix, ci]
                for co in range(Co):
                    y2[idx, co] += xv * w[i, ph, ci, co]
    return out


def transposed_bwd_x(f32[:, :, :, ::1] gy, f32[:, :, :, ::1] w, Py_ssize_t T):
    cdef Py_ssize_t To = gy.shape[0], H = gy.shape[1], W = gy.shape[2], Co = gy.shape[3]
    cdef Py_ssize_t k = w.shape[0], Ci = w.shape[2]
    cdef Py_ssize_t HW = H * W
    out = np.zeros((T, H, W, Ci), dtype=np.float32)
    cdef f32[:, ::1] gx2 = out.reshape(T * HW, Ci)
    cdef f32[:, ::1] gy2 = np.asarray(gy).reshape(To * HW, Co)
    cdef f32[:, :, :, ::1] wt = np.ascontiguousarray(np.transpose(w, (0, 1, 3, 2)))
    cdef Py_ssize_t idx, j, pix, ph, i, f, ci, co
    cdef f32 gv
    for idx in prange(T * HW, nogil=True, schedule='static'):
        j = idx // HW
        pix = idx % HW
        for ph in range(2):
            for i in range(k):
                f = 2 * (j + i) + ph
                if f >= To:
                    break
                for co in range(Co):
                    gv = gy2[f * HW + pix, co]
                    for ci in range(Ci):
                        gx2[idx, ci] += gv * wt[i, ph, co, ci]
    return out
