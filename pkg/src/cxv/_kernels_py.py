"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``CXV_PURE_PYTHON=1``.
Signatures and output layouts match ``_kernels.pyx`` exactly.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    """Patches of a padded [B,C,Hp,Wp] map as a contiguous [B,Ho,Wo,C,kh,kw] array."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def col2im(cols, hp, wp, stride):
    """Adjoint of :func:`im2col`: scatter-add patches back onto a [B,C,Hp,Wp] map."""
    b, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    src = cols.transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += src[:, :, i, j]
    return out


def warp_nearest(img, inv):
    """Nearest-neighbour affine resample of a uint8 [C,H,W] image, zero fill.

    ``inv`` is the 2x3 matrix taking output (x, y) pixel coordinates to input
    coordinates.
    """
    c, h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros_like(img)
    out[:, ok] = img[:, iy[ok], ix[ok]]
    return out
