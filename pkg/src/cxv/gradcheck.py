"""Finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every coordinate of ``x``.

    ``x.data`` is perturbed in place and restored, so ``f`` may also close over
    ``x`` (e.g. when ``x`` is a model parameter).
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of |a - n| / max(1, |a|, |n|).

    ``a`` is the autodiff gradient, ``n`` the central difference. Run at 64-bit
    precision; 32-bit differences are too noisy to be meaningful.
    """
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = np.zeros(x.shape) if x.grad is None else np.asarray(x.grad, dtype=np.float64)
    x.grad = None
    numeric = numerical_grad(f, x, h)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
