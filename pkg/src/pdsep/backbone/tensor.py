"""Dense tensors and the reverse-mode gradient tape."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_state = {"dtype": np.float32, "grad": True}


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def get_dtype():
    return _state["dtype"]


def set_precision(bits: int) -> None:
    """Select the default float width for new tensors (32 or 64)."""
    if bits == 32:
        _state["dtype"] = np.float32
    elif bits == 64:
        _state["dtype"] = np.float64
    else:
        raise ValueError(f"unsupported precision {bits!r}, expected 32 or 64")


@contextlib.contextmanager
def precision64():
    """Verification mode: every tensor created inside uses float64."""
    old = _state["dtype"]
    _state["dtype"] = np.float64
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def is_grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def frozen(tensors: Iterable["Tensor"]):
    """Temporarily stop recording gradients for the given leaves."""
    tensors = [t for t in tensors if t.requires_grad]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t in tensors:
            t.requires_grad = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _state["dtype"])
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = None

    @classmethod
    def _result(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if _state["grad"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; implementations live in ops
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

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(loss: Tensor) -> tuple[list[Tensor], dict[int, np.ndarray]]:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("backward called on a tensor that is not on the tape")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves = []
    for node in reversed(order):
        g = grads.get(id(node))
        if node._backward is None:
            leaves.append(node)
            continue
        grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves, grads


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every leaf reachable from ``loss``.

    Gradients are reset, not accumulated: each leaf ends up holding exactly
    d(loss)/d(leaf) from this call.
    """
    leaves, grads = _propagate(loss)
    for leaf in leaves:
        g = grads.get(id(leaf))
        leaf.grad = None if g is None else np.array(g, dtype=leaf.data.dtype, copy=True)


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Return d(loss)/d(input) for each input without touching any ``.grad``."""
    for t in inputs:
        if t._backward is not None:
            raise TapeError("grad() inputs must be leaf tensors")
    _, grads = _propagate(loss)
    return [
        np.array(grads[id(t)], copy=True) if id(t) in grads else np.zeros_like(t.data)
        for t in inputs
    ]


def zero_grad(params: Iterable[Tensor]) -> None:
    """Set every gradient to zeros of the parameter's shape."""
    for p in params:
        p.grad = np.zeros_like(p.data)
