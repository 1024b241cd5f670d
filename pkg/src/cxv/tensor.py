"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients append a :class:`Node` to the tape; each node gets a monotonically
increasing sequence number, so sorting reachable nodes by descending number
visits every consumer before its producer.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import UsageError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


class _State(threading.local):
    def __init__(self) -> None:
        self.dtype = np.float32
        self.grad_enabled = True


_state = _State()


def set_precision(name: str) -> None:
    """Select the dtype for new tensors: ``"f32"`` (training) or ``"f64"``."""
    try:
        _state.dtype = _PRECISIONS[name]
    except KeyError:
        raise UsageError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}") from None


def get_dtype() -> type:
    return _state.dtype


@contextlib.contextmanager
def precision(name: str):
    old = _state.dtype
    set_precision(name)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def is_grad_enabled() -> bool:
    return _state.grad_enabled


class Tape:
    """Issues node handles in append order.

    Nodes are owned by the tensors they produce, so a graph that goes out of
    scope is freed with it; the tape itself only keeps the counter.
    """

    def __init__(self) -> None:
        self._counter = itertools.count()

    def record(self, tag: str, inputs: tuple, backward: Callable) -> "Node":
        return Node(next(self._counter), tag, inputs, backward)


class Node:
    __slots__ = ("seq", "tag", "inputs", "backward")

    def __init__(self, seq: int, tag: str, inputs: tuple, backward: Callable) -> None:
        self.seq = seq
        self.tag = tag
        self.inputs = inputs
        self.backward = backward

    def __repr__(self) -> str:
        return f"Node({self.seq}, {self.tag!r})"


TAPE = Tape()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            dtype = _state.dtype
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- metadata -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_id(self) -> int | None:
        return None if self.node is None else self.node.seq

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        backward(self, grad)

    # -- operator sugar; implementations live in ops -------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    permute = transpose

    @property
    def T(self):
        from . import ops
        return ops.swap_last(self)


def _scalar_error(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, tag: str) -> Tensor:
    """Wrap ``data`` as the output of an op, recording it when any input needs a gradient.

    ``backward(g)`` must return one gradient (or None) per input.
    """
    out = Tensor(data, dtype=data.dtype)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TAPE.record(tag, tuple(inputs), backward)
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        order.append(t)
        if t.node is not None:
            stack.extend(p for p in t.node.inputs if p.requires_grad)
    # interior nodes newest-first, then leaves
    interior = sorted((t for t in order if t.node is not None), key=lambda t: t.node.seq, reverse=True)
    leaves = [t for t in order if t.node is None]
    return interior + leaves


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor needing it."""
    if grad is None and loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss is not attached to the tape (no input requires grad)")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for t in _topo_order(loss):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            # leaves own their accumulator; interior grads may alias upstream buffers
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        t.grad = g if t.grad is None else t.grad + g
        for inp, gi in zip(t.node.inputs, t.node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
