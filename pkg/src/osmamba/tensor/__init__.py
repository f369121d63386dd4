"""Minimal float64 tensor engine with reverse-mode differentiation."""

from . import ops
from .conv import conv2d
from .core import DomainError, GradTape, ShapeError, TapeError, Tensor, as_tensor, backward, grad_enabled, no_grad
from .gradcheck import analytic_gradient, gradient_check, numerical_gradient
from .nn import Module, Parameter
from .ops import *  # noqa: F401,F403

__all__ = [
    "Tensor",
    "GradTape",
    "Module",
    "Parameter",
    "ShapeError",
    "DomainError",
    "TapeError",
    "as_tensor",
    "backward",
    "no_grad",
    "grad_enabled",
    "conv2d",
    "gradient_check",
    "numerical_gradient",
    "analytic_gradient",
    "ops",
] + list(ops.__all__)
