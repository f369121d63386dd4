"""Selective state-space sequence transform.

Per step k, with input-dependent timescale delta, input matrix B and
readout C (all projected from x):

    A_bar = exp(delta * A)          A = -exp(A_log) < 0
    B_bar = delta * B
    h_k   = A_bar * h_{k-1} + B_bar * x_k,   h_0 = 0
    y_k   = sum_n C_k[n] * h_k[:, n]

The recurrence runs in a compiled kernel with a hand-derived backward pass.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .tensor import ops
from .tensor.core import DomainError, ShapeError, Tensor, as_tensor, make_node
from .tensor.nn import Module, Parameter


@numba.njit(cache=True)
def _scan_forward(x, delta, a, b, c):
    g_count, length, ch = x.shape
    ns = a.shape[2]
    y = np.zeros((g_count, length, ch))
    hs = np.zeros((g_count, length, ch, ns))
    abar = np.empty((g_count, length, ch, ns))
    h = np.zeros((ch, ns))
    for g in range(g_count):
        h[:, :] = 0.0
        for k in range(length):
            for c_i in range(ch):
                d = delta[g, k, c_i]
                dx = d * x[g, k, c_i]
                acc = 0.0
                for n in range(ns):
                    e = math.exp(d * a[g, c_i, n])
                    hv = e * h[c_i, n] + dx * b[g, k, n]
                    h[c_i, n] = hv
                    hs[g, k, c_i, n] = hv
                    abar[g, k, c_i, n] = e
                    acc += c[g, k, n] * hv
                y[g, k, c_i] = acc
    return y, hs, abar


@numba.njit(cache=True)
def _scan_backward(gy, x, delta, a, b, c, hs, abar):
    g_count, length, ch = x.shape
    ns = a.shape[2]
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    carry = np.zeros((ch, ns))
    for g in range(g_count):
        carry[:, :] = 0.0
        for k in range(length - 1, -1, -1):
            for c_i in range(ch):
                d = delta[g, k, c_i]
                xv = x[g, k, c_i]
                gyv = gy[g, k, c_i]
                gd = 0.0
                gxv = 0.0
                for n in range(ns):
                    h = hs[g, k, c_i, n]
                    h_prev = hs[g, k - 1, c_i, n] if k > 0 else 0.0
                    gc[g, k, n] += gyv * h
                    dh = carry[c_i, n] + gyv * c[g, k, n]
                    e = abar[g, k, c_i, n]
                    dabar = dh * h_prev * e
                    a_cn = a[g, c_i, n]
                    gd += dabar * a_cn + dh * b[g, k, n] * xv
                    ga[g, c_i, n] += dabar * d
                    gb[g, k, n] += dh * d * xv
                    gxv += dh * d * b[g, k, n]
                    carry[c_i, n] = dh * e
                gdelta[g, k, c_i] += gd
                gx[g, k, c_i] += gxv
    return gx, gdelta, ga, gb, gc


def selective_scan(x, delta, A, B, C) -> Tensor:
    """Run the recurrence over the second-to-last axis.

    Shapes: ``x``/``delta`` [..., L, C]; ``A`` [..., C, N] (broadcast over the
    leading dims); ``B``/``C`` [..., L, N]. Returns y [..., L, C].
    """
    x, delta, A, B, C = (as_tensor(t) for t in (x, delta, A, B, C))
    if x.ndim < 2 or delta.shape != x.shape:
        raise ShapeError(f"selective_scan: x {x.shape} and delta {delta.shape} must match")
    *lead, length, ch = x.shape
    lead = tuple(lead)
    ns = A.shape[-1]
    if A.shape[-2] != ch:
        raise ShapeError(f"selective_scan: A {A.shape} does not match {ch} channels")
    if B.shape != lead + (length, ns) or C.shape != B.shape:
        raise ShapeError(f"selective_scan: B {B.shape} / C {C.shape} should be {lead + (length, ns)}")
    if np.any(delta.data <= 0):
        raise DomainError("selective_scan: delta must be strictly positive")
    if length == 0:
        raise ShapeError("selective_scan: empty sequence")
    g = int(np.prod(lead)) if lead else 1
    a_full = np.broadcast_to(A.data, lead + (ch, ns))
    xa = np.ascontiguousarray(x.data.reshape(g, length, ch))
    da = np.ascontiguousarray(delta.data.reshape(g, length, ch))
    aa = np.ascontiguousarray(a_full.reshape(g, ch, ns))
    ba = np.ascontiguousarray(B.data.reshape(g, length, ns))
    ca = np.ascontiguousarray(C.data.reshape(g, length, ns))
    y, hs, abar = _scan_forward(xa, da, aa, ba, ca)
    a_shape = A.shape

    def backward(grad):
        gy = np.ascontiguousarray(grad.reshape(g, length, ch))
        gx, gd, ga, gb, gc = _scan_backward(gy, xa, da, aa, ba, ca, hs, abar)
        return (
            gx.reshape(x.shape),
            gd.reshape(x.shape),
            ops.unbroadcast(ga.reshape(lead + (ch, ns)), a_shape),
            gb.reshape(B.shape),
            gc.reshape(C.shape),
        )

    return make_node(y.reshape(x.shape), (x, delta, A, B, C), backward, "selective_scan")


def discretize(A, delta, B) -> tuple[Tensor, Tensor]:
    """Zero-order hold with the first-order input term: A_bar = exp(delta*A), B_bar = delta*B.

    ``A`` [C, N], ``delta`` [L, C], ``B`` [L, N] -> two [L, C, N] tensors.
    """
    A, delta, B = as_tensor(A), as_tensor(delta), as_tensor(B)
    if np.any(delta.data <= 0):
        raise DomainError("discretize: delta must be strictly positive")
    d = ops.reshape(delta, delta.shape + (1,))
    a_bar = ops.exp(ops.mul(d, A))
    b_bar = ops.mul(d, ops.reshape(B, B.shape[:-1] + (1, B.shape[-1])))
    return a_bar, b_bar


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SSMParams(Module):
    """Input-dependent S6 parameters; ``directions`` > 0 stacks independent copies."""

    def __init__(
        self,
        channels: int,
        state_size: int = 8,
        rng: np.random.Generator | None = None,
        directions: int = 0,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        lead = (directions,) if directions else ()
        self.channels = channels
        self.state_size = state_size
        self.directions = directions
        a_init = np.log(np.arange(1, state_size + 1, dtype=np.float64))
        self.A_log = Parameter(np.broadcast_to(a_init, lead + (channels, state_size)).copy())
        bound = 1.0 / math.sqrt(channels)
        self.delta_w = Parameter(rng.uniform(-bound, bound, size=lead + (channels, channels)))
        dt = rng.uniform(dt_min, dt_max, size=lead + (channels,))
        bias_shape = lead + (1, channels) if directions else (channels,)
        self.delta_b = Parameter(_inverse_softplus(dt).reshape(bias_shape))
        self.b_w = Parameter(rng.uniform(-bound, bound, size=lead + (channels, state_size)))
        self.c_w = Parameter(rng.uniform(-bound, bound, size=lead + (channels, state_size)))

    def A(self) -> Tensor:
        return ops.negate(ops.exp(self.A_log))


def s6_block(x, params: SSMParams) -> Tensor:
    """Project delta, B, C from ``x`` and run the selective scan.

    ``x`` is [..., L, C]; with stacked directions it is [..., K, L, C].
    """
    x = as_tensor(x)
    delta = ops.softplus(ops.add(ops.matmul(x, params.delta_w), params.delta_b))
    b = ops.matmul(x, params.b_w)
    c = ops.matmul(x, params.c_w)
    return selective_scan(x, delta, params.A(), b, c)


class S6(Module):
    def __init__(self, channels: int, state_size: int = 8, rng=None, directions: int = 0):
        self.params = SSMParams(channels, state_size, rng, directions)

    def forward(self, x) -> Tensor:
        return s6_block(x, self.params)
