"""CXV network, the Hybrid ViLT variant, and analytic profiling."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ops
from .attention import AttentionConfig, AttentionKind, MultiHeadAttention
from .errors import ConfigError, DimensionError
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor


class Variant(str, enum.Enum):
    CXV = "cxv"
    HYBRID_VILT = "hybrid_vilt"


def default_ladder(model_dim: int, layers: int) -> tuple[int, ...]:
    """Channel ladder ending at ``model_dim``, halving downwards (e.g. 64, 128)."""
    return tuple(max(1, model_dim >> (layers - 1 - i)) for i in range(layers))


@dataclass
class ModelConfig:
    variant: Variant = Variant.CXV
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    layers: int = 5
    mlp_dim: Optional[int] = None  # None: 2 * model_dim
    embed_conv_layers: int = 2
    embed_channels: Optional[tuple[int, ...]] = None  # None: default_ladder
    embed_kernel: int = 3
    embed_stride: int = 1
    classes: int = 10
    in_channels: int = 3
    image_size: tuple[int, int] = (32, 32)
    dropout_p: float = 0.5
    conv_kernel: int = 3

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.mlp_dim is None:
            self.mlp_dim = 2 * self.model_dim
        if not 1 <= self.embed_conv_layers <= 3:
            raise ConfigError(f"embed_conv_layers must be 1, 2 or 3, got {self.embed_conv_layers}")
        if self.embed_channels is None:
            self.embed_channels = default_ladder(self.model_dim, self.embed_conv_layers)
        self.embed_channels = tuple(int(c) for c in self.embed_channels)
        if len(self.embed_channels) != self.embed_conv_layers:
            raise ConfigError(f"embed_channels {self.embed_channels} has {len(self.embed_channels)} "
                              f"entries, expected {self.embed_conv_layers}")
        if self.embed_channels[-1] != self.model_dim:
            raise ConfigError(f"embedding ladder must end at model_dim={self.model_dim}, "
                              f"got {self.embed_channels}")
        if self.classes < 1:
            raise ConfigError("classes must be >= 1")
        self.image_size = tuple(self.image_size)

    @property
    def model_dim(self) -> int:
        return self.attention.model_dim

    @property
    def heads(self) -> int:
        return self.attention.heads

    @property
    def feature_hw(self) -> tuple[int, int]:
        h, w = self.image_size
        k, s = self.embed_kernel, self.embed_stride
        return (h + 2 * (k // 2) - k) // s + 1, (w + 2 * (k // 2) - k) // s + 1


_NAMED = {
    "cnv": AttentionKind.NYSTROMFORMER,
    "cpv": AttentionKind.PERFORMER,
    "cltv": AttentionKind.LINEAR_TRANSFORMER,
    "csv": AttentionKind.SOFTMAX,
    "vilt": AttentionKind.LINEAR_TRANSFORMER,
}


def parse_model_name(name: str) -> tuple[Variant, AttentionKind, int, int]:
    """``"cnv-5/4"`` -> (variant, attention kind, layers, heads)."""
    m = re.fullmatch(r"\s*([a-z]+)-(\d+)/(\d+)\s*", name.lower())
    if not m or m.group(1) not in _NAMED:
        raise ConfigError(f"unrecognised model name {name!r}; expected e.g. cnv-5/4, cpv-5/4, cltv-5/4, vilt-6/8")
    prefix, layers, heads = m.group(1), int(m.group(2)), int(m.group(3))
    variant = Variant.HYBRID_VILT if prefix == "vilt" else Variant.CXV
    return variant, _NAMED[prefix], layers, heads


def named_config(name: str, **overrides) -> ModelConfig:
    variant, kind, layers, heads = parse_model_name(name)
    attn = dict(kind=kind, heads=heads, model_dim=overrides.pop("model_dim", 128),
                dropout_p=overrides.get("dropout_p", 0.5))
    if variant is Variant.HYBRID_VILT:
        attn.update(conv_qkv=True, head_dim=32)
        overrides.setdefault("embed_conv_layers", 3)
    for key in ("landmarks", "pinv_iterations", "kernel_eps", "head_dim"):
        if key in overrides:
            attn[key] = overrides.pop(key)
    return ModelConfig(variant=variant, attention=AttentionConfig(**attn), layers=layers, **overrides)


class MLP(Module):
    """linear -> gelu -> dropout -> linear -> dropout."""

    def __init__(self, d: int, hidden: int, p: float, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)
        self.p = p

    def forward(self, x: Tensor) -> Tensor:
        h = ops.dropout(ops.gelu(self.fc1(x)), self.p, self.training, self._rng)
        return ops.dropout(self.fc2(h), self.p, self.training, self._rng)


class CXVLayer(Module):
    """conv3x3 -> layer norm -> (+ attention) -> (+ mlp), shape preserving.

    Both residuals add onto the normalised tensor; there is no residual around
    the convolution and no activation after it.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d, k = cfg.model_dim, cfg.conv_kernel
        self.conv = Conv2d(d, d, k, rng, stride=1, pad=k // 2)
        self.norm = LayerNorm(d)
        self.attn = MultiHeadAttention(cfg.attention, rng)
        self.mlp = MLP(d, cfg.mlp_dim, cfg.dropout_p, rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        y = self.norm(ops.map_to_seq(self.conv(x)))
        y = y + self.attn(y)
        y = y + self.mlp(y)
        return ops.seq_to_map(y, h, w)


class ViLTLayer(Module):
    """layer norm -> (+ conv-projected linear attention) -> (+ mlp)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.model_dim
        self.norm = LayerNorm(d)
        self.attn = MultiHeadAttention(cfg.attention, rng)
        self.mlp = MLP(d, cfg.mlp_dim, cfg.dropout_p, rng)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        x = x + self.attn(self.norm.forward_map(x))
        s = ops.map_to_seq(x)
        s = s + self.mlp(s)
        return ops.seq_to_map(s, h, w)


class CXVNet(Module):
    """Convolutional embedding, L shape-preserving layers, average pool, linear head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        chans = (cfg.in_channels,) + cfg.embed_channels
        embed = []
        for i in range(cfg.embed_conv_layers):
            k = cfg.embed_kernel if i == 0 else 3
            s = cfg.embed_stride if i == 0 else 1
            embed.append(Conv2d(chans[i], chans[i + 1], k, rng, stride=s, pad=k // 2))
        self.embed = embed
        layer_cls = ViLTLayer if cfg.variant is Variant.HYBRID_VILT else CXVLayer
        self.layers = [layer_cls(cfg, rng) for _ in range(cfg.layers)]
        self.head = Linear(cfg.model_dim, cfg.classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or tuple(x.shape[2:]) != cfg.image_size:
            raise DimensionError(f"expected input [B,{cfg.in_channels},{cfg.image_size[0]},"
                                 f"{cfg.image_size[1]}], got {x.shape}")
        for conv in self.embed:
            x = conv(x)
        for layer in self.layers:
            x = layer(x)
        return self.head(ops.global_avg_pool(x))


def build_cxv(cfg: ModelConfig, seed: int = 0) -> CXVNet:
    if cfg.variant is not Variant.CXV:
        raise ConfigError(f"build_cxv needs variant cxv, got {cfg.variant.value}")
    return CXVNet(cfg, np.random.default_rng(seed))


def build_hybrid_vilt(cfg: ModelConfig, seed: int = 0) -> CXVNet:
    if cfg.variant is not Variant.HYBRID_VILT:
        raise ConfigError(f"build_hybrid_vilt needs variant hybrid_vilt, got {cfg.variant.value}")
    if cfg.attention.kind is not AttentionKind.LINEAR_TRANSFORMER or not cfg.attention.conv_qkv:
        raise ConfigError("Hybrid ViLT uses linear-transformer attention with convolutional q/k/v")
    return CXVNet(cfg, np.random.default_rng(seed))


def build_model(cfg: ModelConfig, seed: int = 0) -> CXVNet:
    if cfg.variant is Variant.HYBRID_VILT:
        return build_hybrid_vilt(cfg, seed)
    return build_cxv(cfg, seed)


# ---------------------------------------------------------------------------
# profiling


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


@dataclass
class ProfileRow:
    name: str
    params: int
    macs: int


@dataclass
class ProfileReport:
    param_count: int
    mac_count: int
    rows: list[ProfileRow]

    def table(self) -> str:
        width = max(len(r.name) for r in self.rows + [ProfileRow("module", 0, 0)])
        lines = [f"{'module':<{width}}  {'params':>12}  {'MACs':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>12,}  {r.macs:>16,}")
        lines.append(f"{'total':<{width}}  {self.param_count:>12,}  {self.mac_count:>16,}")
        return "\n".join(lines)


def _params(m: Module) -> int:
    return count_params(m)


def _conv_macs(conv: Conv2d, h: int, w: int) -> tuple[int, int, int]:
    cout, cin, kh, kw = conv.weight.shape
    ho, wo = conv.output_hw(h, w)
    return cout * cin * kh * kw * ho * wo, ho, wo


def mixing_macs(cfg: AttentionConfig, n: int) -> int:
    """Multiply-accumulates of the token-mixing step for one image, all heads."""
    dh = cfg.head_dim
    if cfg.kind is AttentionKind.SOFTMAX:
        per_head = 2 * n * n * dh
    elif cfg.kind in (AttentionKind.LINEAR_TRANSFORMER, AttentionKind.PERFORMER):
        per_head = 2 * n * dh * dh + n * dh
    else:
        m = cfg.landmarks
        per_head = n * m * dh + m * m * dh + m ** 3 * cfg.pinv_iterations
    return cfg.heads * per_head


def _attn_rows(prefix: str, attn: MultiHeadAttention, n: int) -> list[ProfileRow]:
    proj = [attn.to_q, attn.to_k, attn.to_v, attn.to_out]
    proj_macs = sum(int(np.prod(p.weight.shape)) * n for p in proj)
    return [ProfileRow(f"{prefix}.proj", _params(attn), proj_macs),
            ProfileRow(f"{prefix}.mix", 0, mixing_macs(attn.cfg, n))]


def profile(model: CXVNet, image_size: Optional[tuple[int, int]] = None) -> ProfileReport:
    """Analytic parameter and MAC counts for one forward pass of one image.

    Elementwise work (norms, activations, residual adds, pooling) is excluded.
    """
    cfg = model.config
    h, w = image_size or cfg.image_size
    rows = []
    for i, conv in enumerate(model.embed):
        macs, h, w = _conv_macs(conv, h, w)
        rows.append(ProfileRow(f"embed.{i}", _params(conv), macs))
    n = h * w
    for i, layer in enumerate(model.layers):
        p = f"layers.{i}"
        if isinstance(layer, CXVLayer):
            macs, _, _ = _conv_macs(layer.conv, h, w)
            rows.append(ProfileRow(f"{p}.conv", _params(layer.conv), macs))
        rows.append(ProfileRow(f"{p}.norm", _params(layer.norm), 0))
        rows.extend(_attn_rows(f"{p}.attn", layer.attn, n))
        mlp_macs = n * (int(np.prod(layer.mlp.fc1.weight.shape)) + int(np.prod(layer.mlp.fc2.weight.shape)))
        rows.append(ProfileRow(f"{p}.mlp", _params(layer.mlp), mlp_macs))
    rows.append(ProfileRow("head", _params(model.head), int(np.prod(model.head.weight.shape))))
    return ProfileReport(sum(r.params for r in rows), sum(r.macs for r in rows), rows)


def count_macs(model: CXVNet, input_shape: Optional[tuple[int, ...]] = None) -> int:
    """MACs for one image; ``input_shape`` may be (H, W), (C, H, W) or (B, C, H, W)."""
    hw = None if input_shape is None else tuple(input_shape[-2:])
    return profile(model, hw).mac_count


def with_image_size(cfg: ModelConfig, size: tuple[int, int]) -> ModelConfig:
    return replace(cfg, image_size=tuple(size))
