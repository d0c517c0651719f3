"""Training losses: pixel BCE for masks, cross entropy over class probabilities."""

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import Tensor, as_tensor, check_finite, recording, record

BCE_CLAMP = 1e-7
# guard only; softmax outputs are clamped well above this by BCE-style limits
CE_FLOOR = 1e-12


class _BceOp:
    def __init__(self, pred, clipped, target, low, high):
        self.inputs = (pred,)
        self.output = None
        self.clipped = clipped
        self.target = target
        self.low = low
        self.high = high

    def backward(self, grad):
        p = self.clipped
        t = self.target
        g = (p - t) / (p * (1.0 - p) * p.size)
        # clamped predictions sit on a flat edge of the clipped loss
        g[(p <= self.low) | (p >= self.high)] = 0.0
        return (g * grad,)


def binary_cross_entropy(pred, target, clamp=BCE_CLAMP):
    """Mean BCE over every element; predictions are clamped to
    [clamp, 1 - clamp] before the logs."""
    pred = as_tensor(pred)
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target)
    if target_arr.shape != pred.shape:
        raise ShapeError(
            f"binary_cross_entropy target shape {target_arr.shape} does not match prediction {pred.shape}"
        )
    target_arr = target_arr.astype(pred.dtype, copy=False)
    if target_arr.size and not np.all((target_arr == 0) | (target_arr == 1)):
        raise ValidationError("binary_cross_entropy target must contain only 0 and 1")
    if pred.size == 0:
        raise ValidationError("binary_cross_entropy needs at least one element")
    low = pred.dtype.type(clamp)
    high = pred.dtype.type(1.0 - clamp)
    p = np.clip(pred.data, low, high)
    value = -(target_arr * np.log(p) + (1.0 - target_arr) * np.log(1.0 - p)).mean()
    check_finite(np.asarray(value), "binary cross entropy")
    out = Tensor(np.asarray(value, dtype=pred.dtype))
    if recording(pred):
        op = _BceOp(pred, p, target_arr, low, high)
        op.output = out
        record(op)
    return out


class _CrossEntropyOp:
    def __init__(self, probs, labels, picked):
        self.inputs = (probs,)
        self.output = None
        self.labels = labels
        self.picked = picked

    def backward(self, grad):
        probs = self.inputs[0]
        n = self.labels.shape[0]
        g = np.zeros((n, probs.shape[-1]), dtype=probs.dtype)
        gp = -1.0 / (n * self.picked)
        gp[self.picked <= CE_FLOOR] = 0.0
        g[np.arange(n), self.labels] = gp
        return (g.reshape(probs.shape) * grad,)


def cross_entropy(probs, labels):
    """Mean negative log probability of the true class.

    probs holds probability rows (e.g. softmax output), labels integer ids.
    """
    probs = as_tensor(probs)
    if probs.ndim not in (1, 2):
        raise ShapeError(f"cross_entropy probs must be 1-d or 2-d, got {probs.shape}")
    labels_arr = np.asarray(labels)
    was_1d = probs.ndim == 1
    rows = probs.data.reshape(1, -1) if was_1d else probs.data
    labels_arr = np.atleast_1d(labels_arr)
    if labels_arr.ndim != 1 or labels_arr.shape[0] != rows.shape[0]:
        raise ShapeError(
            f"cross_entropy labels shape {labels_arr.shape} does not match {rows.shape[0]} rows"
        )
    if not np.issubdtype(labels_arr.dtype, np.integer):
        raise ValidationError("cross_entropy labels must be integers")
    c = rows.shape[1]
    if labels_arr.size and (labels_arr.min() < 0 or labels_arr.max() >= c):
        raise ValidationError(f"cross_entropy labels must lie in [0, {c})")
    row_sums = rows.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-4):
        raise ValidationError("cross_entropy expects probability rows summing to 1")
    picked = np.clip(rows[np.arange(rows.shape[0]), labels_arr], CE_FLOOR, 1.0)
    value = -np.log(picked).mean()
    check_finite(np.asarray(value), "cross entropy")
    out = Tensor(np.asarray(value, dtype=probs.dtype))
    if recording(probs):
        op = _CrossEntropyOp(probs, labels_arr, picked)
        op.output = out
        record(op)
    return out
