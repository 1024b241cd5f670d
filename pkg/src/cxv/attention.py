"""Token-mixing mechanisms.

All mechanisms take per-head tensors ``q, k, v`` of shape [B,h,n,dh] and
return [B,h,n,dh]. The softmax version builds the full n x n matrix and is
kept as a reference; the other three never materialise it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import DegeneracyError, DimensionError, DivergenceError, ParameterError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor


class AttentionKind(str, enum.Enum):
    SOFTMAX = "softmax"
    LINEAR_TRANSFORMER = "linear_transformer"
    PERFORMER = "performer"
    NYSTROMFORMER = "nystromformer"


@dataclass
class AttentionConfig:
    kind: AttentionKind = AttentionKind.NYSTROMFORMER
    model_dim: int = 128
    heads: int = 4
    head_dim: Optional[int] = None  # None: model_dim // heads
    landmarks: int = 64
    pinv_iterations: int = 6
    kernel_eps: float = 1e-6
    conv_qkv: bool = False
    dropout_p: float = 0.5

    def __post_init__(self):
        self.kind = AttentionKind(self.kind)
        if self.heads < 1:
            raise ParameterError(f"heads must be >= 1, got {self.heads}")
        if self.head_dim is None:
            if self.model_dim % self.heads:
                raise ParameterError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
            self.head_dim = self.model_dim // self.heads
        if self.head_dim < 1:
            raise ParameterError(f"head_dim must be >= 1, got {self.head_dim}")
        if self.landmarks < 1:
            raise ParameterError(f"landmarks must be >= 1, got {self.landmarks}")
        if self.pinv_iterations < 1:
            raise ParameterError(f"pinv_iterations must be >= 1, got {self.pinv_iterations}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def inner_dim(self) -> int:
        return self.heads * self.head_dim


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim != 4 or q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"q/k/v shapes disagree: {q.shape}, {k.shape}, {v.shape}")


def softmax_attention_reference(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(dh)) v with the full n x n score matrix."""
    _check_qkv(q, k, v)
    scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    return ops.matmul(ops.softmax_lastdim(scores), v)


def _kernel_attention(phi_q: Tensor, phi_k: Tensor, v: Tensor, eps: float, tag: str) -> Tensor:
    # S = sum_j phi(k_j) v_j^T, z = sum_j phi(k_j): O(n dh^2)
    kv = ops.matmul(ops.swap_last(phi_k), v)
    z = ops.sum(phi_k, axis=-2, keepdims=True)
    num = ops.matmul(phi_q, kv)
    den = ops.matmul(phi_q, ops.swap_last(z)) + eps
    zero = np.argwhere(den.data == 0)
    if zero.size:
        b, h, i, _ = zero[0]
        raise DegeneracyError(f"{tag}: denominator underflowed to 0 at batch {b}, head {h}, row {i}")
    return ops.div(num, den)


def linear_transformer_attention(q: Tensor, k: Tensor, v: Tensor, eps: float = 1e-6) -> Tensor:
    """Bidirectional linear attention with feature map elu(x) + 1."""
    _check_qkv(q, k, v)
    return _kernel_attention(ops.elu_plus_one(q), ops.elu_plus_one(k), v, eps, "linear_transformer")


def performer_relu_attention(q: Tensor, k: Tensor, v: Tensor, eps: float = 1e-6) -> Tensor:
    """Generalised kernel attention with a ReLU feature map."""
    _check_qkv(q, k, v)
    return _kernel_attention(ops.relu(q), ops.relu(k), v, eps, "performer")


def landmark_matrix(n: int, m: int, dtype=np.float64) -> np.ndarray:
    """[m, n] averaging matrix mapping n tokens to m segment means.

    Segments are contiguous, the first ``n % m`` one token longer. With
    ``n <= m`` the tokens are used directly and the last one repeats.
    """
    if m <= 0:
        raise ParameterError(f"landmark count must be positive, got {m}")
    if n < 1:
        raise DimensionError("need at least one token")
    p = np.zeros((m, n), dtype=dtype)
    if n <= m:
        p[np.arange(m), np.minimum(np.arange(m), n - 1)] = 1.0
        return p
    base, extra = divmod(n, m)
    start = 0
    for i in range(m):
        length = base + (1 if i < extra else 0)
        p[i, start:start + length] = 1.0 / length
        start += length
    return p


def segment_mean_landmarks(x: Tensor, m: int) -> Tensor:
    """[B,h,n,dh] -> [B,h,m,dh] contiguous segment means."""
    return ops.matmul(Tensor(landmark_matrix(x.shape[-2], m, x.dtype)), x)


def newton_schulz_pinv(a: Tensor, iterations: int = 6) -> Tensor:
    """Iterative Moore-Penrose pseudoinverse of square matrices [..,m,m].

    Starts from a^T / (||a||_1 ||a||_inf) and applies the cubic-order update
    Z <- Z (13I - aZ (15I - aZ (7I - aZ))) / 4.
    """
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"pseudoinverse needs square matrices, got {a.shape}")
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    m = a.shape[-1]
    eye = Tensor(np.eye(m, dtype=a.dtype))
    absa = a if np.all(a.data >= 0) else Tensor(np.abs(a.data))
    norm1 = ops.amax(ops.sum(absa, axis=-2), axis=-1)  # max column sum
    norm_inf = ops.amax(ops.sum(absa, axis=-1), axis=-1)  # max row sum
    denom = ops.reshape(norm1 * norm_inf, a.shape[:-2] + (1, 1))
    z = ops.div(ops.swap_last(a), denom)
    for it in range(1, iterations + 1):
        az = ops.matmul(a, z)
        inner = ops.scale(eye, 7.0) - az
        inner = ops.scale(eye, 15.0) - ops.matmul(az, inner)
        inner = ops.scale(eye, 13.0) - ops.matmul(az, inner)
        z = ops.scale(ops.matmul(z, inner), 0.25)
        if not np.all(np.isfinite(z.data)):
            raise DivergenceError(f"pseudoinverse iteration {it} produced non-finite values")
    return z


def nystrom_attention(q: Tensor, k: Tensor, v: Tensor, landmarks: int = 64,
                      pinv_iterations: int = 6) -> Tensor:
    """Nystrom approximation F (A^+) (B v) of softmax attention."""
    _check_qkv(q, k, v)
    scale = 1.0 / math.sqrt(q.shape[-1])
    q_l = segment_mean_landmarks(q, landmarks)
    k_l = segment_mean_landmarks(k, landmarks)
    f = ops.softmax_lastdim(ops.scale(ops.matmul(q, ops.swap_last(k_l)), scale))
    a = ops.softmax_lastdim(ops.scale(ops.matmul(q_l, ops.swap_last(k_l)), scale))
    b = ops.softmax_lastdim(ops.scale(ops.matmul(q_l, ops.swap_last(k)), scale))
    return ops.matmul(ops.matmul(f, newton_schulz_pinv(a, pinv_iterations)), ops.matmul(b, v))


def mix(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig) -> Tensor:
    if cfg.kind is AttentionKind.SOFTMAX:
        return softmax_attention_reference(q, k, v)
    if cfg.kind is AttentionKind.LINEAR_TRANSFORMER:
        return linear_transformer_attention(q, k, v, cfg.kernel_eps)
    if cfg.kind is AttentionKind.PERFORMER:
        return performer_relu_attention(q, k, v, cfg.kernel_eps)
    return nystrom_attention(q, k, v, cfg.landmarks, cfg.pinv_iterations)


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, inner = x.shape
    return ops.transpose(ops.reshape(x, (b, n, heads, inner // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


class MultiHeadAttention(Module):
    """Projections around :func:`mix`.

    Accepts sequences [B,n,d] or maps [B,d,H,W]; maps are unrolled row-major
    and re-rolled on exit. With ``conv_qkv`` all four projections are 1x1
    convolutions over the map, which requires map input.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        d, inner = cfg.model_dim, cfg.inner_dim
        if cfg.conv_qkv:
            self.to_q = Conv2d(d, inner, 1, rng)
            self.to_k = Conv2d(d, inner, 1, rng)
            self.to_v = Conv2d(d, inner, 1, rng)
            self.to_out = Conv2d(inner, d, 1, rng)
        else:
            self.to_q = Linear(d, inner, rng)
            self.to_k = Linear(d, inner, rng)
            self.to_v = Linear(d, inner, rng)
            self.to_out = Linear(inner, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        is_map = x.ndim == 4
        d = x.shape[1] if is_map else x.shape[-1]
        if d != cfg.model_dim:
            raise DimensionError(f"attention configured for d={cfg.model_dim}, got input {x.shape}")
        if cfg.conv_qkv:
            if not is_map:
                raise DimensionError("convolutional q/k/v projections need a [B,d,H,W] map")
            h, w = x.shape[2:]
            q, k, v = (ops.map_to_seq(p(x)) for p in (self.to_q, self.to_k, self.to_v))
        else:
            if is_map:
                h, w = x.shape[2:]
                x = ops.map_to_seq(x)
            q, k, v = self.to_q(x), self.to_k(x), self.to_v(x)
        heads = cfg.heads
        mixed = merge_heads(mix(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads), cfg))
        if cfg.conv_qkv:
            out = self.to_out(ops.seq_to_map(mixed, h, w))
        else:
            out = self.to_out(mixed)
            if is_map:
                out = ops.seq_to_map(out, h, w)
        return ops.dropout(out, cfg.dropout_p, self.training, self._rng)
