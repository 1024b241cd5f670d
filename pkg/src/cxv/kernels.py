"""Kernel backend selection.

The compiled extension is used when it imports; set ``CXV_PURE_PYTHON=1`` to
force the numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("CXV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    return _impl.im2col(xp, kh, kw, stride)


def col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    return _impl.col2im(cols, hp, wp, stride)


def warp_nearest(img: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return _impl.warp_nearest(np.ascontiguousarray(img, dtype=np.uint8),
                              np.ascontiguousarray(inv, dtype=np.float64))
