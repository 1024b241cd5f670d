# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport cython
from libc.math cimport floor

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, real[:, :, :, :, :, ::1] out, int stride):
    cdef Py_ssize_t b, oi, oj, c, ki, kj, r0, c0
    cdef Py_ssize_t B = out.shape[0], Ho = out.shape[1], Wo = out.shape[2]
    cdef Py_ssize_t C = out.shape[3], KH = out.shape[4], KW = out.shape[5]
    with nogil:
        for b in range(B):
            for oi in range(Ho):
                r0 = oi * stride
                for oj in range(Wo):
                    c0 = oj * stride
                    for c in range(C):
                        for ki in range(KH):
                            for kj in range(KW):
                                out[b, oi, oj, c, ki, kj] = xp[b, c, r0 + ki, c0 + kj]


def _col2im(real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out, int stride):
    cdef Py_ssize_t b, oi, oj, c, ki, kj, r0, c0
    cdef Py_ssize_t B = cols.shape[0], Ho = cols.shape[1], Wo = cols.shape[2]
    cdef Py_ssize_t C = cols.shape[3], KH = cols.shape[4], KW = cols.shape[5]
    with nogil:
        for b in range(B):
            for oi in range(Ho):
                r0 = oi * stride
                for oj in range(Wo):
                    c0 = oj * stride
                    for c in range(C):
                        for ki in range(KH):
                            for kj in range(KW):
                                out[b, c, r0 + ki, c0 + kj] += cols[b, oi, oj, c, ki, kj]


def im2col(xp, int kh, int kw, int stride):
    xp = np.ascontiguousarray(xp)
    b, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((b, ho, wo, c, kh, kw), dtype=xp.dtype)
    _im2col(xp, out, stride)
    return out


def col2im(cols, int hp, int wp, int stride):
    cols = np.ascontiguousarray(cols)
    b, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    _col2im(cols, out, stride)
    return out


def warp_nearest(unsigned char[:, :, ::1] img, double[:, ::1] inv):
    cdef Py_ssize_t C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef Py_ssize_t x, y, ch, ix, iy
    cdef double sx, sy
    out_arr = np.zeros((C, H, W), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] out = out_arr
    with nogil:
        for y in range(H):
            for x in range(W):
                sx = inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]
                sy = inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]
                ix = <Py_ssize_t>floor(sx + 0.5)
                iy = <Py_ssize_t>floor(sy + 0.5)
                if ix < 0 or ix >= W or iy < 0 or iy >= H:
                    continue
                for ch in range(C):
                    out[ch, y, x] = img[ch, iy, ix]
    return out_arr
