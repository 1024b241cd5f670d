"""AdamW, SGD with momentum, and the plateau-driven optimizer switch."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, NumericalError, ParameterError
from .tensor import Tensor


def _check_grads(named: Sequence[tuple[str, Tensor]]) -> None:
    for name, p in named:
        if p.grad is None:
            continue
        if p.grad.shape != p.shape:
            raise ParameterError(f"{name}: gradient shape {p.grad.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}; step aborted")


def _decays(name: str, p: Tensor, exclude_norm_bias: bool) -> bool:
    if not exclude_norm_bias:
        return True
    return p.ndim > 1 and "norm" not in name


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    exclude_norm_bias: bool = False
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class SGDState:
    lr: float = 1e-3
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)


def adamw_step(named_params: Sequence[tuple[str, Tensor]], state: AdamWState) -> None:
    """One AdamW update with decoupled weight decay, in place.

    Parameters without a gradient are skipped. Nothing is modified if any
    gradient is non-finite.
    """
    named_params = list(named_params)
    _check_grads(named_params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and _decays(name, p, state.exclude_norm_bias):
            step = step + state.weight_decay * p.data
        p.data = (p.data - state.lr * step).astype(p.dtype, copy=False)


def sgd_step(named_params: Sequence[tuple[str, Tensor]], state: SGDState) -> None:
    """vel <- momentum * vel + g; theta <- theta - lr * vel."""
    named_params = list(named_params)
    _check_grads(named_params)
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        vel = state.velocity.get(name)
        if vel is None:
            vel = state.velocity[name] = np.zeros_like(p.data)
        vel *= state.momentum
        vel += g
        p.data = (p.data - state.lr * vel).astype(p.dtype, copy=False)


class Phase(str, enum.Enum):
    ADAM = "adamw"
    SGD = "sgd"
    DONE = "done"


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    SWITCH_TO_SGD = "switch_to_sgd"
    STOP = "stop"


@dataclass
class DualOptController:
    """Runs AdamW until test top-1 stops improving for ``patience`` epochs,
    then SGD until the same rule fires again.

    An epoch improves when its accuracy exceeds the best so far by more than
    ``min_delta``. ``switch_epoch`` forces the switch after that epoch;
    ``sgd_epochs`` (if set) fixes the SGD phase length instead of the plateau rule.
    """

    patience: int = 20
    min_delta: float = 0.001
    switch_epoch: Optional[int] = None
    sgd_epochs: Optional[int] = None
    phase: Phase = Phase.ADAM
    best_acc: float = -1.0
    epochs_since_improvement: int = 0
    sgd_epochs_run: int = 0

    def __post_init__(self):
        self.phase = Phase(self.phase)
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ParameterError(f"min_delta must be >= 0, got {self.min_delta}")
        if self.sgd_epochs is not None and self.sgd_epochs < 1:
            raise ParameterError(f"sgd_epochs must be >= 1, got {self.sgd_epochs}")

    @property
    def optimizer(self) -> str:
        return "sgd" if self.phase is not Phase.ADAM else "adamw"

    def update(self, epoch: int, val_top1: float) -> Decision:
        if not 0.0 <= val_top1 <= 1.0 or np.isnan(val_top1):
            raise DataError(f"top-1 accuracy must be a fraction in [0, 1], got {val_top1}")
        if self.phase is Phase.DONE:
            return Decision.STOP
        if val_top1 > self.best_acc + self.min_delta:
            self.best_acc = float(val_top1)
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1

        if self.phase is Phase.ADAM:
            forced = self.switch_epoch is not None and epoch == self.switch_epoch
            if forced or self.epochs_since_improvement >= self.patience:
                self.phase = Phase.SGD
                self.epochs_since_improvement = 0
                return Decision.SWITCH_TO_SGD
            return Decision.CONTINUE

        self.sgd_epochs_run += 1
        if self.sgd_epochs is not None:
            done = self.sgd_epochs_run >= self.sgd_epochs
        else:
            done = self.epochs_since_improvement >= self.patience
        if done:
            self.phase = Phase.DONE
            return Decision.STOP
        return Decision.CONTINUE


def dualopt_update(controller: DualOptController, epoch: int, val_top1: float) -> Decision:
    return controller.update(epoch, val_top1)
