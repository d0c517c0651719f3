"""Differentiable array ops: conv, pooling, linear, activations, glue.

Every op validates shapes, computes the forward value with numpy, and when a
GradGraph is active and an input wants gradients, appends a record holding
exactly what the backward pass needs.

Backward contract: an op returns one gradient (or None) per input, as
distinct arrays. Views of the incoming gradient are fine; views of saved
forward buffers are not, because callers may accumulate in place.
"""

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import Tensor, as_tensor, check_finite, recording, record


class ConvScratch:
    """Reusable conv buffers keyed by role. Reuse is only safe when each
    step's backward completes before the next forward that shares it."""

    __slots__ = ("_bufs",)

    def __init__(self):
        self._bufs = {}

    def take(self, key, shape, dtype):
        buf = self._bufs.get(key)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf


def _conv_geometry(x_shape, w_shape, stride, padding):
    n, cin, h, w = x_shape
    cout, cin_w, kh, kw = w_shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel must have odd extents, got {kh}x{kw}")
    if cin_w != cin:
        raise ShapeError(
            f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}"
        )
    if stride < 1:
        raise ValidationError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValidationError(f"conv2d padding must be >= 0, got {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        )
    return n, cin, h, w, cout, kh, kw, ho, wo


def _im2col(xp, cin, kh, kw, stride, ho, wo, col):
    # block k = (di, dj) holds all cin channels of that kernel tap
    k = 0
    for di in range(kh):
        for dj in range(kw):
            col[:, k * cin : (k + 1) * cin] = xp[
                :, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride
            ]
            k += 1
    return col


class _Conv2dOp:
    def __init__(self, x, weight, bias, stride, padding, col, wmat):
        self.inputs = (x, weight) if bias is None else (x, weight, bias)
        self.output = None
        self.col = col if weight.requires_grad else None
        self.wmat = wmat if x.requires_grad else None
        self.stride = stride
        self.padding = padding

    def backward(self, grad):
        x, weight = self.inputs[0], self.inputs[1]
        bias = self.inputs[2] if len(self.inputs) == 3 else None
        n, cin, h, w = x.shape
        cout, _, kh, kw = weight.shape
        s, p = self.stride, self.padding
        ho, wo = grad.shape[2], grad.shape[3]
        gv = grad.reshape(n, cout, ho * wo)
        grad_b = gv.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        grad_w = None
        if weight.requires_grad:
            gw = np.matmul(gv, self.col.reshape(n, cin * kh * kw, ho * wo).transpose(0, 2, 1))
            grad_w = (
                gw.sum(axis=0)
                .reshape(cout, kh, kw, cin)
                .transpose(0, 3, 1, 2)
                .copy()
            )
        grad_x = None
        if x.requires_grad:
            gcol = np.matmul(self.wmat, gv).reshape(n, cin * kh * kw, ho, wo)
            gxp = np.zeros((n, cin, h + 2 * p, w + 2 * p), dtype=grad.dtype)
            k = 0
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di : di + s * ho : s, dj : dj + s * wo : s] += gcol[
                        :, k * cin : (k + 1) * cin
                    ]
                    k += 1
            grad_x = gxp if p == 0 else gxp[:, :, p : p + h, p : p + w].copy()
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, grad_b


class _Conv1x1Op:
    def __init__(self, x, weight, bias):
        self.inputs = (x, weight) if bias is None else (x, weight, bias)
        self.output = None

    def backward(self, grad):
        x, weight = self.inputs[0], self.inputs[1]
        bias = self.inputs[2] if len(self.inputs) == 3 else None
        n, cin, h, w = x.shape
        cout = weight.shape[0]
        gv = grad.reshape(n, cout, h * w)
        grad_b = gv.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        grad_w = None
        if weight.requires_grad:
            xv = x.data.reshape(n, cin, h * w)
            gw = np.matmul(gv, xv.transpose(0, 2, 1)).sum(axis=0)
            grad_w = gw.reshape(cout, cin, 1, 1)
        grad_x = None
        if x.requires_grad:
            wmat = weight.data.reshape(cout, cin)
            grad_x = np.matmul(wmat.T, gv).reshape(x.shape)
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, grad_b


def conv2d(x, weight, bias=None, stride=1, padding=0, scratch=None):
    """2-d cross correlation over (N, C, H, W) input, torch weight layout."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (Cout, Cin, kh, kw), got {weight.shape}")
    n, cin, h, w, cout, kh, kw, ho, wo = _conv_geometry(x.shape, weight.shape, stride, padding)
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {bias.shape}")
    dtype = np.result_type(x.dtype, weight.dtype)
    rec = recording(x, weight) or (bias is not None and recording(bias))

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        wmat = np.ascontiguousarray(weight.data.reshape(cout, cin), dtype=dtype)
        xv = x.data.reshape(n, cin, h * w)
        y = np.matmul(wmat, xv)
        if bias is not None:
            y += bias.data.reshape(1, cout, 1)
        check_finite(y, "conv2d output")
        out = Tensor(y.reshape(n, cout, ho, wo))
        if rec:
            op = _Conv1x1Op(x, weight, bias)
            op.output = out
            record(op)
        return out

    if padding > 0:
        xp = scratch.take("xp", (n, cin, h + 2 * padding, w + 2 * padding), dtype) if scratch else np.empty((n, cin, h + 2 * padding, w + 2 * padding), dtype)
        xp[:] = 0
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data.astype(dtype, copy=False)
    c9 = cin * kh * kw
    col = scratch.take("col", (n, c9, ho, wo), dtype) if scratch else np.empty((n, c9, ho, wo), dtype)
    _im2col(xp, cin, kh, kw, stride, ho, wo, col)
    # rows of wmat follow the same (di, dj, ci) order as the col blocks
    wmat = np.ascontiguousarray(
        weight.data.transpose(2, 3, 1, 0).reshape(c9, cout), dtype=dtype
    )
    ybuf = scratch.take("out", (n, cout, ho * wo), dtype) if scratch else np.empty((n, cout, ho * wo), dtype)
    np.matmul(np.ascontiguousarray(wmat.T), col.reshape(n, c9, ho * wo), out=ybuf)
    if bias is not None:
        ybuf += bias.data.reshape(1, cout, 1)
    check_finite(ybuf, "conv2d output")
    out = Tensor(ybuf.reshape(n, cout, ho, wo))
    if rec:
        op = _Conv2dOp(x, weight, bias, stride, padding, col, wmat)
        op.output = out
        record(op)
    return out


class _MaxPool2dOp:
    def __init__(self, x, idx, kernel):
        self.inputs = (x,)
        self.output = None
        self.idx = idx
        self.kernel = kernel

    def backward(self, grad):
        x = self.inputs[0]
        k = self.kernel
        gx = np.empty_like(x.data)
        m = 0
        for di in range(k):
            for dj in range(k):
                gx[:, :, di::k, dj::k] = np.where(self.idx == m, grad, 0)
                m += 1
        return (gx,)


def maxpool2d(x, kernel=2, stride=None):
    """Max pooling with stride equal to the kernel; ties go to the first
    window position in row-major scan order."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be (N, C, H, W), got {x.shape}")
    if stride is None:
        stride = kernel
    if stride != kernel:
        raise ValidationError(
            f"maxpool2d supports stride == kernel only, got kernel {kernel} stride {stride}"
        )
    if kernel < 1:
        raise ValidationError(f"maxpool2d kernel must be >= 1, got {kernel}")
    n, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ShapeError(
            f"maxpool2d needs dimensions divisible by {kernel}, got {h}x{w}"
        )
    k = kernel
    views = [x.data[:, :, di::k, dj::k] for di in range(k) for dj in range(k)]
    stacked = np.stack(views)
    idx = stacked.argmax(axis=0)
    out_data = np.take_along_axis(stacked, idx[None], axis=0)[0]
    out = Tensor(out_data)
    if recording(x):
        op = _MaxPool2dOp(x, idx.astype(np.uint8) if k * k <= 255 else idx, k)
        op.output = out
        record(op)
    return out


class _LinearOp:
    def __init__(self, x, weight, bias, was_1d):
        self.inputs = (x, weight) if bias is None else (x, weight, bias)
        self.output = None
        self.was_1d = was_1d

    def backward(self, grad):
        x, weight = self.inputs[0], self.inputs[1]
        bias = self.inputs[2] if len(self.inputs) == 3 else None
        g2 = grad.reshape(1, -1) if self.was_1d else grad
        x2 = x.data.reshape(1, -1) if self.was_1d else x.data
        grad_x = None
        if x.requires_grad:
            gx = g2 @ weight.data
            grad_x = gx.reshape(x.shape)
        grad_w = g2.T @ x2 if weight.requires_grad else None
        grad_b = None
        if bias is not None and bias.requires_grad:
            grad_b = g2.sum(axis=0)
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, grad_b


def linear(x, weight, bias=None):
    """Affine map y = x @ W.T + b with W shaped (out_features, in_features)."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {weight.shape}")
    if x.ndim not in (1, 2):
        raise ShapeError(f"linear input must be 1-d or 2-d, got {x.shape}")
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise ShapeError(
            f"linear input has {x.shape[-1]} features, weight expects {din}"
        )
    if bias is not None and bias.shape != (dout,):
        raise ShapeError(f"linear bias must be ({dout},), got {bias.shape}")
    was_1d = x.ndim == 1
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    check_finite(y, "linear output")
    out = Tensor(y)
    if recording(x, weight) or (bias is not None and recording(bias)):
        op = _LinearOp(x, weight, bias, was_1d)
        op.output = out
        record(op)
    return out


class _ReluOp:
    def __init__(self, x):
        self.inputs = (x,)
        self.output = None

    def backward(self, grad):
        # subgradient 0 at x == 0
        return (grad * (self.inputs[0].data > 0),)


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    if recording(x):
        op = _ReluOp(x)
        op.output = out
        record(op)
    return out


class _SigmoidOp:
    def __init__(self, x, y):
        self.inputs = (x,)
        self.output = None
        self.y = y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # exp of a non-positive argument cannot overflow
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    out = Tensor(y)
    if recording(x):
        op = _SigmoidOp(x, y)
        op.output = out
        record(op)
    return out


class _SoftmaxOp:
    def __init__(self, x, y):
        self.inputs = (x,)
        self.output = None
        self.y = y

    def backward(self, grad):
        dot = (grad * self.y).sum(axis=-1, keepdims=True)
        return ((grad - dot) * self.y,)


def softmax(x):
    """Row softmax over the last axis, shifted by the row max for stability."""
    x = as_tensor(x)
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax input must be 1-d or 2-d, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    if recording(x):
        op = _SoftmaxOp(x, y)
        op.output = out
        record(op)
    return out


class _ReshapeOp:
    def __init__(self, x):
        self.inputs = (x,)
        self.output = None

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    if recording(x):
        op = _ReshapeOp(x)
        op.output = out
        record(op)
    return out


def flatten(x):
    """Collapse all but the leading (batch) axis."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"flatten needs at least 2 dimensions, got {x.shape}")
    return reshape(x, (x.shape[0], -1))


class _ConcatOp:
    def __init__(self, xs, axis):
        self.inputs = tuple(xs)
        self.output = None
        self.axis = axis

    def backward(self, grad):
        sizes = [t.shape[self.axis] for t in self.inputs]
        splits = np.cumsum(sizes[:-1])
        return tuple(np.split(grad, splits, axis=self.axis))


def concat(tensors, axis=1):
    xs = [as_tensor(t) for t in tensors]
    if not xs:
        raise ValidationError("concat needs at least one tensor")
    nd = xs[0].ndim
    for t in xs[1:]:
        if t.ndim != nd:
            raise ShapeError("concat inputs must share rank")
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis))
    if recording(*xs):
        op = _ConcatOp(xs, axis)
        op.output = out
        record(op)
    return out


class _UpsampleNearestOp:
    def __init__(self, x, factor):
        self.inputs = (x,)
        self.output = None
        self.factor = factor

    def backward(self, grad):
        n, c, ho, wo = grad.shape
        f = self.factor
        return (grad.reshape(n, c, ho // f, f, wo // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x, factor=2):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest input must be (N, C, H, W), got {x.shape}")
    if factor < 1:
        raise ValidationError(f"upsample factor must be >= 1, got {factor}")
    out = Tensor(np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3))
    if recording(x):
        op = _UpsampleNearestOp(x, factor)
        op.output = out
        record(op)
    return out


class _GlobalAvgPoolOp:
    def __init__(self, x):
        self.inputs = (x,)
        self.output = None

    def backward(self, grad):
        n, c, h, w = self.inputs[0].shape
        g = grad / (h * w)
        return (np.broadcast_to(g[:, :, None, None], (n, c, h, w)),)


def global_avg_pool(x):
    """Spatial mean: (N, C, H, W) -> (N, C)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool input must be (N, C, H, W), got {x.shape}")
    out = Tensor(x.data.mean(axis=(2, 3)))
    if recording(x):
        op = _GlobalAvgPoolOp(x)
        op.output = out
        record(op)
    return out


class _AddOp:
    def __init__(self, x, y):
        self.inputs = (x, y)
        self.output = None

    def backward(self, grad):
        return grad.copy(), grad.copy()


def add(x, y):
    x = as_tensor(x)
    y = as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"add needs matching shapes, got {x.shape} and {y.shape}")
    out = Tensor(x.data + y.data)
    if recording(x, y):
        op = _AddOp(x, y)
        op.output = out
        record(op)
    return out


class _ScaleOp:
    def __init__(self, x, c):
        self.inputs = (x,)
        self.output = None
        self.c = c

    def backward(self, grad):
        return (grad * self.c,)


def scale(x, c):
    """Multiply by a python scalar constant (no gradient for c)."""
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.data * np.asarray(c, dtype=x.dtype))
    if recording(x):
        op = _ScaleOp(x, c)
        op.output = out
        record(op)
    return out


class _SumOp:
    def __init__(self, x):
        self.inputs = (x,)
        self.output = None

    def backward(self, grad):
        return (np.broadcast_to(grad, self.inputs[0].shape),)


def sum_all(x):
    """Sum every element down to a scalar."""
    x = as_tensor(x)
    out = Tensor(x.data.sum())
    if recording(x):
        op = _SumOp(x)
        op.output = out
        record(op)
    return out
