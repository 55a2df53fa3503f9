"""Tensor type and the reverse-mode differentiation record.

Every differentiable operation produces a :class:`Tensor` that remembers its
input tensors, a closure mapping the output adjoint to input adjoints, and the
function/kwargs needed to recompute it.  :func:`build_record` flattens the
graph behind a scalar loss into a topologically ordered list of nodes, which
:func:`backward` walks in reverse.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_replay")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._replay: tuple[Callable, dict] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; ops is imported lazily to avoid a cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable,
                fn: Callable, kwargs: dict | None = None) -> Tensor:
    """Wrap a forward result, attaching graph edges when any input needs grad.

    ``backward(g)`` must return one adjoint (or None) per parent.  ``fn`` must
    reproduce ``data`` when called as ``fn(*parents, **kwargs)``.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._replay = (fn, kwargs or {})
    return out


def build_record(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of the non-leaf nodes feeding ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or node._backward is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, record: list[Tensor] | None = None) -> list[Tensor]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Returns the record that was walked.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return []
    if record is None:
        record = build_record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(record):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        in_grads = node._backward(g)
        for parent, pg in zip(node._parents, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    return record


def replay(record: list[Tensor], substitutions: dict[int, Tensor] | None = None) -> dict[int, Tensor]:
    """Re-execute a record forward, optionally with substituted leaves.

    Returns a map from original node id to the recomputed tensor.
    """
    values: dict[int, Tensor] = dict(substitutions or {})
    with no_grad():
        for node in record:
            fn, kwargs = node._replay
            args = [values.get(id(p), p) for p in node._parents]
            values[id(node)] = fn(*args, **kwargs)
    return values


def leaves(record: Iterable[Tensor]) -> list[Tensor]:
    """Distinct grad-requiring leaves referenced by a record, in first-use order."""
    out, seen = [], set()
    for node in record:
        for p in node._parents:
            if p._backward is None and p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out
