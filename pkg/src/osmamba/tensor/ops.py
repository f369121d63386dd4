"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and registers a backward rule
through :func:`make_node`. Broadcasting follows numpy's trailing-dimension
alignment; gradients are summed back to the input shape.
"""

from __future__ import annotations

import builtins
import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .core import DomainError, ShapeError, Tensor, as_tensor, make_node

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_node(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0):
        raise DomainError("div: divisor contains zero elements")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_node(out, (a, b), backward, "div")


def hypot(a, b) -> Tensor:
    """sqrt(a**2 + b**2) with the gradient defined as 0 where the result is 0."""
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    r = np.sqrt(ad * ad + bd * bd)

    def backward(g):
        safe = np.where(r > 0, r, 1.0)
        scale = np.where(r > 0, g / safe, 0.0)
        return unbroadcast(scale * ad, ad.shape), unbroadcast(scale * bd, bd.shape)

    return make_node(r, (a, b), backward, "hypot")


def atan2(y, x) -> Tensor:
    """Four-quadrant angle of (x, y) in (-pi, pi]; 0 (with zero gradient) at the origin."""
    y, x = as_tensor(y), as_tensor(x)
    broadcast_shape(y.shape, x.shape)
    yd, xd = y.data, x.data
    # +0.0 maps a signed zero to +0 so the result lands on +pi, not -pi
    out = np.arctan2(yd + 0.0, xd)
    r2 = xd * xd + yd * yd

    def backward(g):
        safe = np.where(r2 > 0, r2, 1.0)
        scale = np.where(r2 > 0, g / safe, 0.0)
        return unbroadcast(scale * xd, yd.shape), unbroadcast(-scale * yd, xd.shape)

    return make_node(out, (y, x), backward, "atan2")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    mask = a.data >= b.data
    return make_node(
        np.maximum(a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(g * mask, a.shape), unbroadcast(g * ~mask, b.shape)),
        "maximum",
    )


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------


def _unary(x, value: np.ndarray, dfdx: np.ndarray, op: str) -> Tensor:
    return make_node(value, (x,), lambda g: (g * dfdx,), op)


def negate(x) -> Tensor:
    x = as_tensor(x)
    return make_node(-x.data, (x,), lambda g: (-g,), "negate")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, out, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return _unary(x, np.log(x.data), 1.0 / x.data, "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: input must be nonnegative")
    out = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
    return _unary(x, out, d, "sqrt")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.data * x.data, 2.0 * x.data, "square")


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return _unary(x, np.abs(x.data), np.sign(x.data), "abs")


def sin(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.sin(x.data), np.cos(x.data), "sin")


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.cos(x.data), -np.sin(x.data), "cos")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _unary(x, s, s * (1.0 - s), "sigmoid")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _unary(x, out, _sigmoid(v), "softplus")


def silu(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    s = _sigmoid(v)
    return _unary(x, v * s, s * (1.0 + v * (1.0 - s)), "silu")


def relu(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    return _unary(x, np.maximum(v, 0.0), (v > 0).astype(v.dtype), "relu")


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    v = x.data
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
    return _unary(x, v * cdf, cdf + v * pdf, "gelu")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    v = x.data
    inside = ((v >= lo) & (v <= hi)).astype(v.dtype)
    return _unary(x, np.clip(v, lo, hi), inside, "clip")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "silu": silu,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "negate": negate,
    "clip": clip,
}


def elementwise(op: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("softplus", x)``."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b, **kwargs) if b is not None else fn(a, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def linear(x, weight, bias=None) -> Tensor:
    """y[..., o] = sum_i x[..., i] * weight[i, o] + bias[o]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    n_in, n_out = weight.shape
    xd, wd = x.data, weight.data
    out = xd @ wd
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (n_out,):
            raise ShapeError(f"linear: bias {bias.shape} does not match output width {n_out}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, n_in).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, backward, "linear")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad @ bd, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last dim {d}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        ggamma = (flat * xhat.reshape(-1, d)).sum(axis=0) if gamma.requires_grad else None
        gbeta = flat.sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward, "layer_norm")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    v = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(v)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def global_avg_pool(x, channels_last: bool = True) -> Tensor:
    """Average over the two spatial axes: [..., H, W, C] -> [..., C] (or [..., C, H, W] -> [..., C])."""
    x = as_tensor(x)
    return mean(x, axis=(-3, -2) if channels_last else (-2, -1))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return make_node(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "permute")


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(t.shape[i] != xs[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(np.concatenate([t.data for t in xs], axis=ax), xs, backward, "concat")


def split(x, sections: int | Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split into equal ``sections`` or at the given sizes along ``axis``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError(f"split: axis of size {n} is not divisible into {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if builtins.sum(sizes) != n:
            raise ShapeError(f"split: sizes {sizes} do not cover axis of size {n}")
    out = []
    start = 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + s)
        out.append(getitem(x, tuple(idx)))
        start += s
    return out


def getitem(x, index) -> Tensor:
    """Basic (slice / integer) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return make_node(x.data[index], (x,), backward, "getitem")


def take(x, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; the axis is replaced by ``indices.shape``."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    shape = x.shape
    flat_idx = indices.reshape(-1)

    def backward(g):
        moved = np.moveaxis(g, tuple(range(ax, ax + indices.ndim)), tuple(range(indices.ndim)))
        moved = moved.reshape((flat_idx.size,) + moved.shape[indices.ndim :])
        acc = np.zeros((shape[ax],) + moved.shape[1:])
        np.add.at(acc, flat_idx, moved)
        return (np.moveaxis(acc, 0, ax),)

    return make_node(np.take(x.data, indices, axis=ax), (x,), backward, "take")


def permute_axis(x, perm: np.ndarray, inverse: np.ndarray, axis: int) -> Tensor:
    """Gather with a bijective index; the backward pass is the inverse gather."""
    x = as_tensor(x)
    ax = axis % x.ndim
    return make_node(
        np.take(x.data, perm, axis=ax),
        (x,),
        lambda g: (np.take(g, inverse, axis=ax),),
        "permute_axis",
    )


def pad_reflect(x, pad_h: int, pad_w: int, channels_last: bool = True) -> Tensor:
    """Reflect-pad the bottom and right edges of the spatial axes."""
    x = as_tensor(x)
    if pad_h == 0 and pad_w == 0:
        return x
    h_ax, w_ax = (-3, -2) if channels_last else (-2, -1)
    h, w = x.shape[h_ax], x.shape[w_ax]
    rows = np.pad(np.arange(h), (0, pad_h), mode="reflect" if h > 1 else "edge")
    cols = np.pad(np.arange(w), (0, pad_w), mode="reflect" if w > 1 else "edge")
    return take(take(x, rows, h_ax), cols, w_ax)


def pixel_unshuffle(x, r: int, channels_last: bool = False) -> Tensor:
    """[..., C, H, W] -> [..., C*r*r, H/r, W/r]; output channel = c*r*r + dy*r + dx."""
    x = as_tensor(x)
    if channels_last:
        *lead, h, w, c = x.shape
    else:
        *lead, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial size {h}x{w} not divisible by {r}")
    lead = tuple(lead)
    n = len(lead)
    if channels_last:
        t = reshape(x, lead + (h // r, r, w // r, r, c))
        # -> [..., H/r, W/r, C, dy, dx]
        t = permute(t, tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
        return reshape(t, lead + (h // r, w // r, c * r * r))
    t = reshape(x, lead + (c, h // r, r, w // r, r))
    # -> [..., C, dy, dx, H/r, W/r]
    t = permute(t, tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
    return reshape(t, lead + (c * r * r, h // r, w // r))


def pixel_shuffle(x, r: int, channels_last: bool = False) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    x = as_tensor(x)
    if channels_last:
        *lead, h, w, c = x.shape
    else:
        *lead, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    lead = tuple(lead)
    n = len(lead)
    co = c // (r * r)
    if channels_last:
        t = reshape(x, lead + (h, w, co, r, r))
        # [..., H, W, C, dy, dx] -> [..., H, dy, W, dx, C]
        t = permute(t, tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2))
        return reshape(t, lead + (h * r, w * r, co))
    t = reshape(x, lead + (co, r, r, h, w))
    # [..., C, dy, dx, H, W] -> [..., C, H, dy, W, dx]
    t = permute(t, tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2))
    return reshape(t, lead + (co, h * r, w * r))


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


def where_mask(x, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 mask (zeros where ``mask`` is False)."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (unbroadcast(g * m, x.shape),), "mask")


def l1_mean(a, b) -> Tensor:
    return mean(abs(sub(a, b)))


__all__ = [
    "unbroadcast",
    "add",
    "sub",
    "mul",
    "div",
    "hypot",
    "atan2",
    "maximum",
    "negate",
    "exp",
    "log",
    "sqrt",
    "square",
    "abs",
    "sin",
    "cos",
    "sigmoid",
    "softplus",
    "silu",
    "relu",
    "gelu",
    "clip",
    "elementwise",
    "linear",
    "matmul",
    "layer_norm",
    "softmax",
    "sum",
    "mean",
    "global_avg_pool",
    "reshape",
    "permute",
    "concat",
    "split",
    "getitem",
    "take",
    "permute_axis",
    "pad_reflect",
    "pixel_unshuffle",
    "pixel_shuffle",
    "stop_gradient",
    "where_mask",
    "l1_mean",
]
