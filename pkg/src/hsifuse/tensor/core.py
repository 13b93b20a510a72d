"""Dense tensors with a reverse-mode gradient tape.

A :class:`Tensor` wraps a numpy array. Every op that has at least one input
with ``requires_grad`` records a :class:`TapeNode` holding its inputs and a
backward closure; :func:`backward` walks those nodes in reverse creation order
and frees them afterwards, so a tape can only be consumed once.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_state = threading.local()
_seq = itertools.count()


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}; use float32 or float64")
    _state.dtype = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (e.g. ``np.float64`` for grad checks)."""
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextmanager
def no_grad():
    """Run ops without recording a tape (evaluation)."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class TapeError(RuntimeError):
    pass


class TapeNode:
    __slots__ = ("op", "inputs", "backward_fn", "seq", "consumed")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_seq)
        self.consumed = False

    def __repr__(self):
        return f"TapeNode({self.op}, seq={self.seq})"


class Tensor:
    """n-dimensional float array with an optional gradient-tape attachment."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None
        self._finite = False  # set once an op has verified the values

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # operator sugar; implementations live in hsifuse.tensor.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar constant")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _sum_is_finite(data: np.ndarray) -> bool:
    with np.errstate(over="ignore", invalid="ignore"):
        return bool(np.isfinite(data.sum()))


def make_op(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    structural: bool = False,
) -> Tensor:
    """Wrap the result of a forward computation and record it on the tape.

    ``backward_fn(g)`` receives the gradient of the output and returns one
    gradient (or ``None``) per input, each shaped like that input.
    ``structural`` ops only move or copy values, so their output needs no
    finiteness scan when every input came out of a verified op.
    """
    skip = structural and all(t._finite for t in inputs)
    # a finite sum rules out nan/inf cheaply; only overflowing sums need the full scan
    if not skip and not _sum_is_finite(data) and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite values in forward output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._finite = True
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out._node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any tensor requiring grad")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._node is None:
            continue
        if t._node.consumed:
            raise TapeError(f"tape already consumed at {t._node!r}; rebuild the graph")
        seen.add(id(t))
        order.append(t)
        stack.extend(t._node.inputs)
    order.sort(key=lambda t: t._node.seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): seed}
    for t in order:
        node = t._node
        g = grads.pop(id(t), None)
        if g is not None:
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise TapeError(
                        f"{node.op}: backward produced grad {gi.shape} for input {inp.shape}"
                    )
                if inp._node is None:
                    inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi
        node.consumed = True
        node.inputs = ()
        node.backward_fn = None
