"""Dense fp64 tensors and the reverse-mode tape."""
from __future__ import annotations

import contextlib
import threading

import numpy as np


class GraphError(RuntimeError):
    """Raised for misuse of the compute graph (double backward, non-scalar loss)."""


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording graph nodes (inference)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One recorded operation: its inputs and the vector-Jacobian product.

    ``vjp(g)`` returns one gradient (or None) per input. Saved activations
    live in the closure and are dropped when the node is released.
    """

    __slots__ = ("op", "inputs", "vjp", "released")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.released = False


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.name = name

    @classmethod
    def from_op(cls, data, op, inputs, vjp):
        out = cls(data)
        if _grad_enabled() and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.node = Node(op, inputs, vjp)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the implementations live in ``ops``.
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
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate into existing buffers so several snippets can share
    one optimizer step. The graph is released afterwards; a second call on
    the same graph raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise GraphError("loss is not attached to a graph")
    if loss.node.released:
        raise GraphError("backward called twice on the same graph; rebuild it first")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        node = t.node
        if node is None:
            continue
        if node.released:
            raise GraphError("backward called twice on the same graph; rebuild it first")
        for parent, pg in zip(node.inputs, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node.released = True
        node.vjp = None


class _StopGradientPin:
    def __init__(self):
        self.values = []
        self.cursor = None

    def freeze(self):
        """Switch from recording to replaying the recorded values."""
        self.cursor = 0

    def rewind(self):
        self.cursor = 0


@contextlib.contextmanager
def pin_stop_gradients():
    """Hold every ``stop_gradient`` output at the values of a reference pass.

    The first evaluation inside the context records each stop_gradient
    output; after ``pin.freeze()`` later evaluations replay them in call
    order (call ``pin.rewind()`` before each one). Finite differences taken
    this way see only the gradient-carrying paths.
    """
    pin = _StopGradientPin()
    prev = getattr(_state, "pin", None)
    _state.pin = pin
    try:
        yield pin
    finally:
        _state.pin = prev


def stop_gradient(x):
    """Identity in the forward pass; blocks gradient flow in backward."""
    pin = getattr(_state, "pin", None)
    if pin is not None:
        if pin.cursor is None:
            pin.values.append(x.data.copy())
        else:
            data = pin.values[pin.cursor]
            pin.cursor += 1
            return Tensor(data)
    return Tensor(x.data)
