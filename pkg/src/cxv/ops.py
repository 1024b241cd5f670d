"""Differentiable operations on :class:`~cxv.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per input.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import DataError, DimensionError, ParameterError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    return _const(a, b), b


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_result(out, (a, b), back, "div")


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,), "scale")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def elu_plus_one(x: Tensor) -> Tensor:
    """elu(x) + 1: x + 1 for x >= 0, exp(x) below; strictly positive."""
    xd = x.data
    pos = xd >= 0
    e = np.exp(np.minimum(xd, 0))
    out = np.where(pos, xd + 1, e).astype(x.dtype)
    d = np.where(pos, 1, e).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * d,), "elu_plus_one")


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    out = (xd * cdf).astype(x.dtype)

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(x.dtype),)

    return make_result(out, (x,), back, "gelu")


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# reductions and layout


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axes, keepdims), 1.0 / count)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximiser."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis)
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
        return (full,)

    return make_result(out if keepdims else np.squeeze(out, axis), (x,), back, "amax")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


permute = transpose


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def map_to_seq(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,H*W,C], tokens row-major over H then W."""
    b, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def seq_to_map(x: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`map_to_seq`."""
    b, n, c = x.shape
    if n != h * w:
        raise DimensionError(f"cannot re-roll {n} tokens into a {h}x{w} map")
    return transpose(reshape(x, (b, h, w, c)), (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias over the last dimension; weight is [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last dim {weight.shape[1]}, got shape {x.shape}")
    xd, wd = x.data, weight.data
    flat = xd.reshape(-1, xd.shape[-1])
    out = flat @ wd.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[0],))

    def back(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ flat if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, lambda g: back(g)[:len(inputs)], "linear")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding. x [B,Cin,H,W], w [Cout,Cin,kh,kw]."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D input and kernel, got {x.shape} and {w.shape}")
    bsz, cin, h, wd_ = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    hp, wp = h + 2 * pad, wd_ + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = kernels.im2col(xp, kh, kw, stride)
    _, ho, wo = cols.shape[:3]
    cols2 = cols.reshape(bsz * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = cols2 @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(cols.shape)
            gxp = kernels.col2im(dcols, hp, wp, stride)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd_] if pad else gxp
        if w.requires_grad:
            gw = (g2.T @ cols2).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return make_result(out, inputs, lambda g: back(g)[:len(inputs)], "conv2d")


# ---------------------------------------------------------------------------
# normalisation, softmax, pooling, loss


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with biased variance, then scale and shift."""
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise DimensionError("layer_norm over an empty channel dimension")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    lead = tuple(range(xd.ndim - 1))

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        return gx, gg, gb

    return make_result(out.astype(x.dtype), (x, gamma, beta), back, "layer_norm")


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a nonempty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), back, "softmax")


softmax = softmax_lastdim


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return make_result(out, (x,), lambda g: (g - sm * g.sum(axis=-1, keepdims=True),), "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B,K] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    bsz, k = logits.shape
    if labels.shape[0] != bsz:
        raise DimensionError(f"{labels.shape[0]} labels for {bsz} logit rows")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at index {bad[0]} outside [0, {k})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(bsz)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1
        return ((p * (g / bsz)).astype(logits.dtype),)

    return make_result(loss, (logits,), back, "cross_entropy")
