"""ADAM optimizer and the step-decay learning-rate schedule."""
from typing import Iterable, List

import numpy as np

from app.tensor.engine import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> None:
    """One bias-corrected ADAM update of every parameter, in place."""
    for p in params:
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


def step_decay(lr0: float, epoch: float, factor: float, every: float) -> float:
    """lr0 * factor ** floor(epoch / every)."""
    if every <= 0:
        return lr0
    return lr0 * factor ** int(np.floor(epoch / every))


class Adam:
    """Holds the parameter list and current learning rate for a training run."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
