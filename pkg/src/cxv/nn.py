"""Parameter containers and the basic layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data, dtype=get_dtype()), requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks its attributes to find parameters and submodules in definition order."""

    training: bool = True
    _rng: np.random.Generator | None = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator | None) -> None:
        """Share one dropout generator across the module tree."""
        for _, m in self.named_modules():
            m._rng = rng

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (d_out, d_in), d_in))
        self.bias = Parameter(uniform_init(rng, (d_out,), d_in)) if bias else None

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, bias: bool = True):
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(uniform_init(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in)) if bias else None
        self.stride = stride
        self.pad = pad

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k = self.weight.shape[2]
        return ((h + 2 * self.pad - k) // self.stride + 1,
                (w + 2 * self.pad - k) // self.stride + 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class LayerNorm(Module):
    """Normalises the last axis; use :meth:`forward_map` for [B,C,H,W] maps."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

    def forward_map(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        return ops.seq_to_map(self.forward(ops.map_to_seq(x)), h, w)
