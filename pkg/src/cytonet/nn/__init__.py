"""Minimal numpy autodiff: tensors, a gradient tape, ops, losses and Adam."""

from .tensor import (
    GradGraph,
    Tensor,
    as_tensor,
    check_finite,
    finite_checks,
    finite_checks_enabled,
    set_finite_checks,
)
from .functional import (
    ConvScratch,
    add,
    concat,
    conv2d,
    flatten,
    global_avg_pool,
    linear,
    maxpool2d,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sum_all,
    upsample_nearest,
)
from .losses import BCE_CLAMP, binary_cross_entropy, cross_entropy
from .optim import Adam, AdamState, adam_step, init_adam
from .layers import Conv2d, Linear

__all__ = [
    "GradGraph",
    "Tensor",
    "as_tensor",
    "check_finite",
    "finite_checks",
    "finite_checks_enabled",
    "set_finite_checks",
    "ConvScratch",
    "add",
    "concat",
    "conv2d",
    "flatten",
    "global_avg_pool",
    "linear",
    "maxpool2d",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "sum_all",
    "upsample_nearest",
    "BCE_CLAMP",
    "binary_cross_entropy",
    "cross_entropy",
    "Adam",
    "AdamState",
    "adam_step",
    "init_adam",
    "Conv2d",
    "Linear",
]
