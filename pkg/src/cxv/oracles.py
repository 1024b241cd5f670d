"""Plain-numpy reference computations used to check the fast paths.

Nothing here touches :mod:`cxv.ops` or the tape; the loops are deliberately
naive.
"""

import numpy as np


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_loops(x, w, bias, stride=1, pad=0):
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for b in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    s = bias[o] if bias is not None else 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                r, q = i * stride + u - pad, j * stride + v - pad
                                if 0 <= r < h and 0 <= q < wd:
                                    s += x[b, c, r, q] * w[o, c, u, v]
                    out[b, o, i, j] = s
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_attention(q, k, v):
    return softmax_rows(q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])) @ v


def elu_plus_one(x):
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0)))


def relu(x):
    return np.maximum(x, 0.0)


def kernel_attention_quadratic(q, k, v, phi, eps=1e-6):
    """Explicit n x n kernel form: row i = sum_j w_ij v_j / (sum_j w_ij + eps)."""
    w = phi(q) @ np.swapaxes(phi(k), -1, -2)
    return (w @ v) / (w.sum(axis=-1, keepdims=True) + eps)


def relative_error(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
