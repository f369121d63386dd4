"""Adam with a cosine-annealed learning rate."""

from __future__ import annotations

import math

import numpy as np

from ..tensor.nn import Parameter


def cosine_lr(step: int, total: int, lr_max: float = 2e-4, lr_min: float = 1e-6) -> float:
    """lr(0) = lr_max, lr(total - 1) = lr_min, half a cosine in between."""
    if total <= 1:
        return lr_max
    step = min(max(step, 0), total - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / (total - 1)))


class Adam:
    """``scales`` optionally multiplies the step size per parameter (default 1)."""

    def __init__(self, params: list[Parameter], lr: float = 2e-4, betas=(0.9, 0.99), eps: float = 1e-8, scales=None):
        self.params = list(params)
        self.scales = [1.0] * len(self.params) if scales is None else [float(s) for s in scales]
        if len(self.scales) != len(self.params):
            raise ValueError(f"{len(self.scales)} lr scales for {len(self.params)} parameters")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v, k in zip(self.params, self.m, self.v, self.scales):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= k * lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
