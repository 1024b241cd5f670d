"""Run configuration: a closed ``key=value`` schema with default values for every key."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .attention import AttentionConfig, AttentionKind
from .data import AugmentPolicy, SchedulePhase, TrainSchedule, post_training_schedule
from .errors import CXVError, ConfigError
from .model import ModelConfig, Variant, parse_model_name
from .optim import AdamWState, DualOptController, SGDState


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",")) if s else ()


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {s!r}")
        return v
    return parse


def _at_least(lo):
    return lambda v: v >= lo, f">= {lo}"


def _fraction_open():
    return lambda v: 0 <= v < 1, "in [0, 1)"


def _positive():
    return lambda v: v > 0, "> 0"


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[tuple] = None


_KINDS = tuple(k.value for k in AttentionKind)

SCHEMA: dict[str, Key] = {
    "model.name": Key(str.strip, "cnv-5/4"),
    "model.variant": Key(_choice("cxv", "hybrid_vilt"), None),
    "model.attention": Key(_choice(*_KINDS), None),
    "model.layers": Key(int, None, _at_least(1)),
    "model.heads": Key(int, None, _at_least(1)),
    "model.dim": Key(int, 128, _at_least(1)),
    "model.mlp_dim": Key(int, 0, _at_least(0)),
    "model.head_dim": Key(int, 0, _at_least(0)),
    "model.embed_conv_layers": Key(int, None, _at_least(1)),
    "model.embed_channels": Key(_ints, ()),
    "model.embed_kernel": Key(int, 3, _at_least(1)),
    "model.embed_stride": Key(int, 1, _at_least(1)),
    "model.landmarks": Key(int, 64, _at_least(1)),
    "model.pinv_iterations": Key(int, 6, _at_least(1)),
    "model.kernel_eps": Key(float, 1e-6, _at_least(0.0)),
    "model.dropout": Key(float, 0.5, _fraction_open()),
    "data.dataset": Key(_choice("cifar10", "cifar100"), "cifar10"),
    "data.dir": Key(str.strip, ""),
    "data.train_subset": Key(int, 0, _at_least(0)),
    "data.test_subset": Key(int, 0, _at_least(0)),
    "data.batch_size": Key(int, 32, _at_least(1)),
    "optim.lr": Key(float, 1e-3, _positive()),
    "optim.beta1": Key(float, 0.9, _fraction_open()),
    "optim.beta2": Key(float, 0.999, _fraction_open()),
    "optim.eps": Key(float, 1e-8, _positive()),
    "optim.weight_decay": Key(float, 0.01, _at_least(0.0)),
    "optim.exclude_norm_bias": Key(_bool, False),
    "optim.sgd_lr": Key(float, 1e-3, _positive()),
    "optim.momentum": Key(float, 0.9, _fraction_open()),
    "dualopt.patience": Key(int, 20, _at_least(1)),
    "dualopt.min_delta": Key(float, 0.001, _at_least(0.0)),
    "dualopt.switch_epoch": Key(int, 0, _at_least(0)),
    "dualopt.sgd_epochs": Key(int, 0, _at_least(0)),
    "schedule.post_train": Key(_bool, False),
    "schedule.max_epochs": Key(int, 0, _at_least(0)),
    "augment.enabled": Key(_bool, False),
    "augment.n_ops": Key(int, 1, _at_least(1)),
    "augment.magnitude": Key(int, 1, (lambda v: 0 <= v <= 30, "in [0, 30]")),
    "seed": Key(int, 0, _at_least(0)),
    "precision": Key(_choice("f32", "f64"), "f32"),
    "out.dir": Key(str.strip, "runs/cxv"),
    "out.checkpoint_every": Key(int, 1, _at_least(0)),
    "out.wall_clock": Key(_bool, True),
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


class RunConfig:
    """Validated configuration; look values up with ``cfg["model.dim"]``."""

    def __init__(self, values: Optional[dict[str, Any]] = None, lines: Optional[dict[str, int]] = None):
        self.values = {k: entry.default for k, entry in SCHEMA.items()}
        self.lines = dict(lines or {})
        for k, v in (values or {}).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = v
        self._validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **updates) -> "RunConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return RunConfig(vals, self.lines)

    def _where(self, key: str) -> str:
        return f"line {self.lines[key]}: " if key in self.lines else ""

    def _validate(self) -> None:
        for key, entry in SCHEMA.items():
            v = self.values[key]
            if entry.check is None or v is None:
                continue
            ok, desc = entry.check
            if not ok(v):
                raise ConfigError(f"{self._where(key)}{key}={_fmt(v)} violates {desc}")
        try:
            parse_model_name(self["model.name"])
            self.model_config()
        except CXVError as exc:
            culprit = next((k for k in self.lines if k.startswith("model.")), None)
            where = self._where(culprit) if culprit else ""
            raise ConfigError(f"{where}invalid model configuration: {exc}") from None

    # -- derived objects ------------------------------------------------
    def model_config(self) -> ModelConfig:
        variant, kind, layers, heads = parse_model_name(self["model.name"])
        if self["model.variant"]:
            variant = Variant(self["model.variant"])
        if self["model.attention"]:
            kind = AttentionKind(self["model.attention"])
        layers = self["model.layers"] or layers
        heads = self["model.heads"] or heads
        vilt = variant is Variant.HYBRID_VILT
        head_dim = self["model.head_dim"] or (32 if vilt else None)
        attn = AttentionConfig(kind=kind, model_dim=self["model.dim"], heads=heads, head_dim=head_dim,
                               landmarks=self["model.landmarks"], pinv_iterations=self["model.pinv_iterations"],
                               kernel_eps=self["model.kernel_eps"], conv_qkv=vilt,
                               dropout_p=self["model.dropout"])
        embed_layers = self["model.embed_conv_layers"] or (3 if vilt else 2)
        classes = 100 if self["data.dataset"] == "cifar100" else 10
        return ModelConfig(variant=variant, attention=attn, layers=layers,
                           mlp_dim=self["model.mlp_dim"] or None, embed_conv_layers=embed_layers,
                           embed_channels=self["model.embed_channels"] or None,
                           embed_kernel=self["model.embed_kernel"], embed_stride=self["model.embed_stride"],
                           classes=classes, dropout_p=self["model.dropout"])

    def adamw_state(self) -> AdamWState:
        return AdamWState(lr=self["optim.lr"], beta1=self["optim.beta1"], beta2=self["optim.beta2"],
                          eps=self["optim.eps"], weight_decay=self["optim.weight_decay"],
                          exclude_norm_bias=self["optim.exclude_norm_bias"])

    def sgd_state(self) -> SGDState:
        return SGDState(lr=self["optim.sgd_lr"], momentum=self["optim.momentum"])

    def controller(self) -> DualOptController:
        return DualOptController(patience=self["dualopt.patience"], min_delta=self["dualopt.min_delta"],
                                 switch_epoch=self["dualopt.switch_epoch"] or None,
                                 sgd_epochs=self["dualopt.sgd_epochs"] or None)

    def augment_policy(self, enabled: Optional[bool] = None) -> AugmentPolicy:
        return AugmentPolicy(enabled=self["augment.enabled"] if enabled is None else enabled,
                             n_ops=self["augment.n_ops"], magnitude=self["augment.magnitude"],
                             rng_seed=self["seed"])

    def schedule(self) -> TrainSchedule:
        if self["schedule.post_train"]:
            return post_training_schedule(self.augment_policy(True), self.controller)
        return TrainSchedule([SchedulePhase(self.augment_policy(), self.controller())])

    def data_dir(self) -> str:
        return self["data.dir"] or os.environ.get("CXV_DATA_DIR", "")

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.values.items())


def parse_config(text: str) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored.

    An empty value (``model.layers=``) leaves the key at its default.
    """
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key=value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if not val.strip():
            values[key] = SCHEMA[key].default  # empty value: keep the default
            lines[key] = no
            continue
        try:
            values[key] = SCHEMA[key].parse(val)
        except ValueError as exc:
            raise ConfigError(f"line {no}: cannot parse {key}: {exc}") from None
        lines[key] = no
    return RunConfig(values, lines)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
