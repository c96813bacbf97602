"""Adam optimizer."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Parameter


def adam_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter, then zero the gradients."""
    for p in params:
        p.step_count += 1
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step_count)
        v_hat = p.v / (1.0 - beta2 ** p.step_count)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        g.fill(0.0)


class Adam:
    """Holds hyperparameters so a training loop can call ``opt.step()``."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
