"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Tensor, no_grad


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(Tensor(x)).item()
            flat[i] = orig - h
            fm = f(Tensor(x)).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def analytic_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    loss = f(t)
    loss.backward()
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def gradient_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - cd| / max(|analytic|, |cd|, 1e-8)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    ana = analytic_gradient(f, x)
    num = numerical_gradient(f, x, h)
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
    return float(np.max(np.abs(ana - num) / denom))
