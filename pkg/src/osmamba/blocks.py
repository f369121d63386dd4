"""Network building blocks on channels-last maps [..., H, W, C].

OS-SSM: linear + LayerNorm lift to D channels, 2D DFT, half spectrum,
parallel amplitude / phase Mambas (DWConv -> SiLU -> scan -> S6 -> merge ->
LayerNorm), inverse DFT, SiLU gating, LayerNorm + linear back to C, then the
prior affine transform. Each unit of an OS-SSB is pre-normalised and residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fourier, scan
from .ssm import S6
from .tensor import ops
from .tensor.conv import conv2d
from .tensor.core import ShapeError, Tensor, as_tensor
from .tensor.nn import Module, Parameter


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=(n_out,))) if bias else None

    def forward(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    """Channels-last convolution with 'same' zero padding for odd kernels."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator, groups: int = 1, bias: bool = True):
        fan_in = (c_in // groups) * kernel_size * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(c_out, c_in // groups, kernel_size, kernel_size)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=(c_out,))) if bias else None
        self.padding = kernel_size // 2
        self.groups = groups

    def forward(self, x) -> Tensor:
        return conv2d(x, self.weight, self.bias, padding=self.padding, groups=self.groups, channels_last=True)


@dataclass
class OSSSMConfig:
    in_channels: int
    inner_channels: int | None = None
    state_size: int = 8
    dwconv_kernel: int = 3
    prior_dim: int = 32
    scan_mode: str = "os"

    def __post_init__(self):
        if self.inner_channels is None:
            self.inner_channels = self.in_channels
        if min(self.in_channels, self.inner_channels, self.state_size, self.prior_dim) < 1:
            raise ValueError(f"all sizes must be positive: {self}")
        if self.inner_channels < self.in_channels:
            raise ValueError("inner_channels must be >= in_channels")


class SpectralMamba(Module):
    """DWConv -> SiLU -> (scan -> S6 -> merge) per direction -> mean -> LayerNorm."""

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator, scan_mode: str = "os", kernel: int = 3):
        self.kinds = scan.SCAN_MODES[scan_mode]
        self.scan_mode = scan_mode
        self.dwconv = Conv2d(dim, dim, kernel, rng, groups=dim)
        self.s6 = S6(dim, state_size, rng, directions=len(self.kinds))
        self.norm = LayerNorm(dim)
        # the branch starts as an exact pass-through of the spectrum
        self.norm.gamma.data[:] = 0.0

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        h, w = x.shape[-3], x.shape[-2]
        trajs = scan.trajectories(self.scan_mode, h, w)
        u = ops.silu(self.dwconv(x))
        seqs = scan.scan_many(u, trajs)  # [..., K, L, D]
        ys = self.s6(seqs)
        grids = scan.merge_many(ys, trajs)  # [..., K, H, W, D]
        merged = ops.mean(grids, axis=-4)
        return self.norm(merged)


def inject_prior(x_out, z, proj: Linear) -> Tensor:
    """x_out * Z1 + Z2 with (Z1, Z2) = split(proj(z)) broadcast over H x W."""
    x_out = as_tensor(x_out)
    c = x_out.shape[-1]
    zz = proj(z)
    if zz.shape[-1] != 2 * c:
        raise ShapeError(f"prior projection gives {zz.shape[-1]} values, need {2 * c}")
    z1, z2 = ops.split(zz, 2, axis=-1)
    shape = zz.shape[:-1] + (1, 1, c)
    return ops.add(ops.mul(x_out, ops.reshape(z1, shape)), ops.reshape(z2, shape))


def make_prior_proj(prior_dim: int, channels: int, rng: np.random.Generator) -> Linear:
    proj = Linear(prior_dim, 2 * channels, rng)
    # start near the identity affine map: scale ~ 1, shift ~ 0
    proj.weight.data *= 0.1
    proj.bias.data[:channels] = 1.0
    proj.bias.data[channels:] = 0.0
    return proj


class OSSSM(Module):
    def __init__(self, cfg: OSSSMConfig, rng: np.random.Generator):
        c, d = cfg.in_channels, cfg.inner_channels
        self.cfg = cfg
        self.norm_pre = LayerNorm(c)
        self.proj_in = Linear(c, d, rng)
        self.norm_in = LayerNorm(d)
        self.amplitude_mamba = SpectralMamba(d, cfg.state_size, rng, cfg.scan_mode, cfg.dwconv_kernel)
        self.phase_mamba = SpectralMamba(d, cfg.state_size, rng, cfg.scan_mode, cfg.dwconv_kernel)
        self.norm_out = LayerNorm(d)
        self.proj_out = Linear(d, c, rng)
        self.prior_proj = make_prior_proj(cfg.prior_dim, c, rng)

    def spectral(self, x) -> tuple[Tensor, fourier.ComplexSpectrum]:
        """Run both spectral branches on the lifted map X; returns (X_modulated, filtered spectrum)."""
        h, w = x.shape[-3], x.shape[-2]
        fourier.require_even(h, w)
        hs = fourier.half_spectrum(fourier.dft2(x))
        # orthonormal scaling keeps amplitudes O(1) instead of O(HW) at the DC bin
        scale = math.sqrt(h * w)
        amp = ops.mul(hs.amplitude, 1.0 / scale)
        amp = ops.add(amp, self.amplitude_mamba(amp))
        pha = ops.add(hs.phase, self.phase_mamba(hs.phase))
        full = fourier.reconstruct_full(fourier.HalfSpectrum(ops.mul(amp, scale), pha), w)
        return ops.mul(fourier.idft2(full), ops.silu(x)), full

    def forward(self, x_in, z) -> Tensor:
        x_in = as_tensor(x_in)
        fourier.require_even(x_in.shape[-3], x_in.shape[-2])
        x = self.norm_in(self.proj_in(self.norm_pre(x_in)))
        x_mod, _ = self.spectral(x)
        x_out = self.proj_out(self.norm_out(x_mod))
        return ops.add(x_in, inject_prior(x_out, z, self.prior_proj))


def _l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    norm = ops.sqrt(ops.add(ops.sum(ops.square(x), axis=axis, keepdims=True), eps))
    return ops.div(x, norm)


class Attention(Module):
    """Transposed (channel) self-attention with depthwise-convolved Q, K, V."""

    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 1):
        if channels % heads:
            raise ShapeError(f"{channels} channels not divisible by {heads} heads")
        self.heads = heads
        self.norm = LayerNorm(channels)
        self.qkv = Linear(channels, 3 * channels, rng, bias=False)
        self.qkv_dw = Conv2d(3 * channels, 3 * channels, 3, rng, groups=3 * channels, bias=False)
        self.temperature = Parameter(np.ones((heads, 1, 1)))
        self.proj = Linear(channels, channels, rng, bias=False)

    def attention_map(self, x) -> Tensor:
        return self._forward(x)[1]

    def _forward(self, x):
        x = as_tensor(x)
        *lead, h, w, c = x.shape
        lead = tuple(lead)
        n = len(lead)
        ch = c // self.heads
        qkv = self.qkv_dw(self.qkv(self.norm(x)))
        q, k, v = ops.split(qkv, 3, axis=-1)

        def heads_first(t):
            t = ops.reshape(t, lead + (h * w, self.heads, ch))
            return ops.permute(t, tuple(range(n)) + (n + 1, n + 2, n))  # [..., heads, ch, HW]

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        q = _l2_normalize(q, -1)
        k = _l2_normalize(k, -1)
        logits = ops.div(ops.matmul(q, ops.permute(k, tuple(range(n + 1)) + (n + 2, n + 1))), self.temperature)
        attn = ops.softmax(logits, axis=-1)
        out = ops.matmul(attn, v)  # [..., heads, ch, HW]
        out = ops.permute(out, tuple(range(n)) + (n + 2, n, n + 1))
        out = ops.reshape(out, lead + (h, w, c))
        return ops.add(x, self.proj(out)), attn

    def forward(self, x) -> Tensor:
        return self._forward(x)[0]


class GDFN(Module):
    """Gated depthwise-conv feed-forward: GELU(path1) * path2, both depthwise 3x3."""

    def __init__(self, channels: int, rng: np.random.Generator, expansion: float = 2.0):
        hidden = max(1, int(channels * expansion))
        self.hidden = hidden
        self.norm = LayerNorm(channels)
        self.proj_in = Linear(channels, 2 * hidden, rng, bias=False)
        self.dwconv = Conv2d(2 * hidden, 2 * hidden, 3, rng, groups=2 * hidden, bias=False)
        self.proj_out = Linear(hidden, channels, rng, bias=False)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        u = self.dwconv(self.proj_in(self.norm(x)))
        a, b = ops.split(u, 2, axis=-1)
        return ops.add(x, self.proj_out(ops.mul(ops.gelu(a), b)))


class OSSB(Module):
    """OS-SSM -> GDFN -> Attention -> GDFN; the prior enters the OS-SSM only."""

    def __init__(self, cfg: OSSSMConfig, rng: np.random.Generator, expansion: float = 2.0, heads: int = 1):
        c = cfg.in_channels
        self.ssm = OSSSM(cfg, rng)
        self.ffn1 = GDFN(c, rng, expansion)
        self.attn = Attention(c, rng, heads)
        self.ffn2 = GDFN(c, rng, expansion)

    def forward(self, x, z) -> Tensor:
        x = self.ssm(x, z)
        x = self.ffn1(x)
        x = self.attn(x)
        return self.ffn2(x)
