"""
Tensor and Tape: the reverse-mode differentiation core.

=== HOW THE PIECES FIT ===

A Tensor is a float64 numpy array plus (optionally) a gradient buffer.
Tensors created by you with requires_grad=True are "leaves": the model
parameters. Every operator in autodiff.ops produces a new Tensor.

A Tape is an ordered log of the operators that ran while it was active:

    with Tape() as tape:
        out = relu(affine(x, w, b))
        loss = l1_loss(out, y)
    backward(loss, tape)        # w.grad and b.grad now hold d(loss)/dw, db

Each recorded entry keeps its inputs, its output and a backward rule that
turns the gradient of the output into gradients of the inputs. backward()
walks the log from the end to the start, which is a valid reverse
topological order because an entry can only use tensors that existed
before it was recorded.

Operators run outside any Tape record nothing, which is what evaluation
uses. The active tape is per thread, so independent tapes can be used from
different threads at the same time; one tape must not be shared.
"""

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from utils.errors import ShapeError

_local = threading.local()


class Tensor:
    """Dense float64 value with an optional gradient buffer."""

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        # set by ops when the tensor was produced by a recorded entry
        self._on_tape = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def tracks_grad(self):
        return self.requires_grad or self._on_tape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(value):
    """Wraps arrays / numbers as constant Tensors; Tensors pass through."""
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.entries = []

    def record(self, op, inputs, output, backward_fn):
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn))

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False


def current_tape():
    """The innermost active Tape on this thread, or None."""
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss, tape):
    """
    Accumulates d(loss)/d(leaf) into .grad of every requires_grad leaf.

    Calling it twice without zeroing the leaves adds the gradients twice.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss._on_tape:
        raise ShapeError("loss was not produced by an operation recorded on this tape")

    # gradients of intermediate (non-leaf) tensors, keyed by identity
    pending = {id(loss): np.ones_like(loss.data)}

    for entry in reversed(tape.entries):
        grad_out = pending.pop(id(entry.output), None)
        if grad_out is None:
            continue
        input_grads = entry.backward(grad_out)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.tracks_grad:
                continue
            if tensor.requires_grad:
                tensor.grad += grad
            if tensor._on_tape:
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
