"""AdamW with decoupled weight decay and per-group learning rates."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_update(param, state, lr, weight_decay):
    """One AdamW step for ``param`` at the (already incremented) ``state.step``.

    Decay is applied as a separate multiplicative shrink by ``1 - lr * wd``.
    """
    name = param.name
    if name not in state.m:
        state.m[name] = np.zeros_like(param.value)
        state.v[name] = np.zeros_like(param.value)
    g = param.grad
    b1, b2 = state.beta1, state.beta2
    m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
    v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
    t = state.step
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    if weight_decay:
        param.value *= 1.0 - lr * weight_decay
    param.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


class AdamW:
    def __init__(self, params, group_lr, weight_decay=0.0, state=None):
        self.params = list(params)
        self.group_lr = dict(group_lr)
        self.weight_decay = weight_decay
        self.state = AdamWState() if state is None else state

    def step(self):
        self.state.step += 1
        for p in self.params:
            adamw_update(p, self.state, self.group_lr[p.group], self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
