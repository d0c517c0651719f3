"""Parameter-holding layers: fan-in-scaled uniform weights, zero biases."""

import numpy as np

from ..errors import ValidationError
from . import functional as F
from .tensor import Tensor


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def _zero_init(shape, dtype):
    return Tensor(np.zeros(shape, dtype), requires_grad=True)


class Conv2d:
    """3x3-style convolution layer; owns weight (Cout, Cin, k, k) and bias."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        if rng is None:
            raise ValidationError("Conv2d needs an explicit rng for reproducible init")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _uniform_init(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype
        )
        self.bias = _zero_init((out_channels,), dtype)
        self._scratch = F.ConvScratch()

    def __call__(self, x, reuse_buffers=False):
        scratch = self._scratch if reuse_buffers else None
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, scratch)

    def parameters(self):
        return [self.weight, self.bias]


class Linear:
    """Affine layer; weight is (out_features, in_features)."""

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        if rng is None:
            raise ValidationError("Linear needs an explicit rng for reproducible init")
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _uniform_init(rng, (out_features, in_features), in_features, dtype)
        self.bias = _zero_init((out_features,), dtype)

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]
