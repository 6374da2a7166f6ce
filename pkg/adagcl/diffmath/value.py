"""
Tape nodes of the reverse-mode engine.

A Value wraps a dense numpy buffer. Operations on Values record their
parents and a closure that maps the output gradient to parent gradients;
``backward`` replays those closures in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from adagcl.exceptions import NumericalError, ShapeError

_state = threading.local()


def default_dtype() -> np.dtype:
    """Floating dtype used for new Values on this thread."""
    return getattr(_state, "dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    """Whether operations currently record the tape."""
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default floating dtype (float32 or float64)."""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording gradient closures."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Value:
    """
    A node of the computation tape.

    Attributes:
        data: Dense forward buffer
        grad: Gradient buffer of the same shape, or None before backward
        requires_grad: Whether gradients are accumulated into this node
        name: Optional label (parameter name) used by checkpoints and reports
    """

    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Value"] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
        op: str = "",
        name: Optional[str] = None,
    ):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(default_dtype())
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward_fn
        self.op = op
        self.name = name

    @classmethod
    def parameter(cls, data, name: Optional[str] = None) -> "Value":
        """Create a trainable leaf."""
        return cls(np.array(data, dtype=default_dtype()), requires_grad=True, name=name)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Value":
        """Stop-gradient: same buffer, no tape history."""
        return Value(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        """Add ``grad`` into this node's gradient buffer."""
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match value shape {self.data.shape} ({self.op})"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable node requiring grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite loss value {self.data.reshape(-1)[0]}")

        order = _topological_order(self)
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; implementations live in adagcl.diffmath.ops
    def __add__(self, other):
        from adagcl.diffmath import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from adagcl.diffmath import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from adagcl.diffmath import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from adagcl.diffmath import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from adagcl.diffmath import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from adagcl.diffmath import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from adagcl.diffmath import ops
        if isinstance(other, Value):
            raise ShapeError("division by a Value is not supported")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from adagcl.diffmath import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from adagcl.diffmath import ops
        return ops.matmul(self, other)


def as_value(x) -> Value:
    """Wrap constants so that every op input is a Value."""
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=default_dtype()))


def make_result(data: np.ndarray, parents: Sequence[Value], backward_fn, op: str) -> Value:
    """Build an op output, registering the closure only when a parent needs it."""
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    if needs:
        return Value(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Value(data, op=op)


def _topological_order(root: Value) -> list:
    """Iterative DFS post-order; each node appears exactly once."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order
