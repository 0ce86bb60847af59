"""Dense float64 tensors with a reverse-mode gradient tape.

Operations only record themselves while a :class:`Tape` is active on the
current thread and at least one input requires a gradient.  Outside a tape
every op is a plain numpy computation, which keeps evaluation cheap.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError, UsageError

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array with optional gradient participation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the op functions live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other))

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other))

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.hadamard(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, as_tensor(other))

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside the block append nodes in
    execution order, so walking the list backwards is a valid reverse
    topological order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        node = loss._node
        if node is None or node[0] is not self:
            raise UsageError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.nodes[: node[1] + 1]):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            parent_grads = rec.backward(g)
            for p, pg in zip(rec.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._node is None:
                    # leaf: accumulate into the user-visible buffer
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                    p.grad += pg
                else:
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
        # leaves that were reachable on the tape but got no signal still own a buffer
        for rec in self.nodes[: node[1] + 1]:
            for p in rec.parents:
                if p.requires_grad and p._node is None and p.grad is None:
                    p.grad = np.zeros_like(p.data)


def record(out_data: np.ndarray, parents: Sequence[Tensor],
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out_data`` as a Tensor and register it on the active tape.

    ``backward`` maps the output gradient to one gradient (or None) per parent.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = (tape, len(tape.nodes))
        tape.nodes.append(_Node(out, tuple(parents), backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss.size != 1 or loss.ndim > 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise UsageError("loss was not produced on a tape")
    loss._node[0].backward(loss)


def parameter(shape, rng: np.random.Generator, fan_in: int | None = None,
              name: str | None = None) -> Tensor:
    """Uniform(+-sqrt(1/fan_in)) initialised trainable tensor."""
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        fan_in = shape[0] if shape else 1
    bound = np.sqrt(1.0 / max(int(fan_in), 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_parameter(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)


def check_shape(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)
