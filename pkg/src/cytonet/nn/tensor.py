"""Reverse-mode automatic differentiation over numpy arrays.

A GradGraph is a tape: every differentiable op executed while a graph is
active appends one record. backward() walks the tape once in reverse and
accumulates gradients into the leaves that requested them. Tensors default
to float32; float64 is available for finite-difference checks.
"""

import numpy as np

from ..errors import NumericError, ValidationError

_FLOAT_DTYPES = (np.float32, np.float64)

# module state: innermost active graph and the finite-guard toggle
_active_graph = None
_finite_checks = True


class Tensor:
    """A numpy array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flags})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class GradGraph:
    """Tape of executed ops; use as a context manager around a forward pass."""

    def __init__(self):
        self._tape = []
        self._outer = None

    def __enter__(self):
        global _active_graph
        self._outer = _active_graph
        _active_graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_graph
        _active_graph = self._outer
        self._outer = None
        return False

    def __len__(self):
        return len(self._tape)

    def record(self, op):
        self._tape.append(op)

    def clear(self):
        self._tape.clear()

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into .grad of every leaf that requires it."""
        if not isinstance(loss, Tensor):
            raise ValidationError("backward expects a Tensor loss")
        if loss.size != 1:
            raise ValidationError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        if not any(op.output is loss for op in self._tape):
            raise ValidationError("loss was not produced under this graph")
        check_finite(loss.data, "loss")
        loss.grad = np.ones_like(loss.data)
        # reverse tape walk: each op is visited exactly once, and every
        # output gradient is complete before its producer runs
        for op in reversed(self._tape):
            out_grad = op.output.grad
            if out_grad is None:
                continue
            grads = op.backward(out_grad)
            for inp, g in zip(op.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    # ops may hand back views of out_grad; own a copy before
                    # later contributions accumulate in place
                    inp.grad = g if g.flags.owndata else g.copy()
                else:
                    inp.grad += g


def active_graph():
    return _active_graph


def recording(*tensors):
    """True when a graph is active and any argument wants gradients."""
    if _active_graph is None:
        return False
    return any(t.requires_grad for t in tensors)


def record(op):
    op.output.requires_grad = True
    _active_graph.record(op)


def set_finite_checks(enabled):
    global _finite_checks
    _finite_checks = bool(enabled)


class finite_checks:
    """Context manager that toggles the non-finite guards, e.g. in hot loops."""

    def __init__(self, enabled):
        self._enabled = bool(enabled)
        self._prev = None

    def __enter__(self):
        global _finite_checks
        self._prev = _finite_checks
        _finite_checks = self._enabled
        return self

    def __exit__(self, exc_type, exc, tb):
        global _finite_checks
        _finite_checks = self._prev
        return False


def finite_checks_enabled():
    return _finite_checks


def check_finite(arr, what):
    """Raise NumericError if arr holds NaN or infinities. min/max based, cheap."""
    if not _finite_checks or arr.size == 0:
        return
    lo = arr.min()
    hi = arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NumericError(f"non-finite values in {what}")
