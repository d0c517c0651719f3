"""Adam with bias correction and epsilon outside the square root."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .tensor import check_finite


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise ValidationError("adam betas must lie in [0, 1)")
    if lr <= 0.0:
        raise ValidationError("adam learning rate must be positive")
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for p in params:
        state.m.append(np.zeros_like(p.data))
        state.v.append(np.zeros_like(p.data))
    return state


def adam_step(params, grads, state):
    """One update in place. grads may be None to read each param's .grad."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValidationError("adam_step params, grads and state must align")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            raise ValidationError("adam_step got a parameter without a gradient")
        if g.shape != p.data.shape:
            raise ValidationError(
                f"adam_step gradient shape {g.shape} does not match parameter {p.data.shape}"
            )
        check_finite(g, "gradient")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Object wrapper over adam_step for the usual step()/zero_grad() loop."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = init_adam(self.params, lr, beta1, beta2, eps)

    def step(self):
        adam_step(self.params, None, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
