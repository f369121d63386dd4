"""Compact prior: dual-domain extractor, denoising network and the T-step
deterministic sampler used to generate the prior without ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fourier
from .blocks import Conv2d, Linear
from .tensor import ops
from .tensor.core import ShapeError, Tensor, as_tensor
from .tensor.nn import Module


class ResBlock(Module):
    """conv3x3 -> ReLU -> conv3x3, plus identity skip."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.conv1 = Conv2d(width, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)

    def forward(self, x) -> Tensor:
        return ops.add(x, self.conv2(ops.relu(self.conv1(x))))


class PriorExtractor(Module):
    """Dual-domain prior extractor.

    images -> pixel-unshuffle -> conv -> DFT half spectrum -> amplitude and
    phase branches of residual blocks -> inverse DFT -> three convs -> GAP ->
    two ReLU linear layers -> [B, M].

    ``n_images`` = 2 for the teacher (input and ground truth), 1 for the
    condition extractor that only sees the input.
    """

    def __init__(self, n_images: int, prior_dim: int, rng: np.random.Generator, width: int = 16, downsample: int = 4, n_res: int = 5):
        self.n_images = n_images
        self.downsample = downsample
        c_in = 3 * n_images * downsample * downsample
        self.conv_in = Conv2d(c_in, width, 3, rng)
        self.amp_branch = [ResBlock(width, rng) for _ in range(n_res)]
        self.phase_branch = [ResBlock(width, rng) for _ in range(n_res)]
        self.refine = [Conv2d(width, width, 3, rng) for _ in range(3)]
        self.fc1 = Linear(width, prior_dim, rng)
        self.fc2 = Linear(prior_dim, prior_dim, rng)

    def forward(self, *images) -> Tensor:
        if len(images) != self.n_images:
            raise ValueError(f"expected {self.n_images} image(s), got {len(images)}")
        ims = [as_tensor(im) for im in images]
        for im in ims[1:]:
            if im.shape != ims[0].shape:
                raise ShapeError(f"image shapes differ: {ims[0].shape} vs {im.shape}")
        x = ims[0] if len(ims) == 1 else ops.concat(ims, axis=-3)
        batched = x.ndim == 4
        if not batched:
            x = ops.reshape(x, (1,) + x.shape)
        h, w = x.shape[-2], x.shape[-1]
        r = self.downsample
        mult = 2 * r
        ph, pw = (-h) % mult, (-w) % mult
        x = ops.permute(x, (0, 2, 3, 1))
        x = ops.pad_reflect(x, ph, pw, channels_last=True)
        x = ops.pixel_unshuffle(x, r, channels_last=True)
        feat = self.conv_in(x)
        full_w = feat.shape[-2]
        hs = fourier.half_spectrum(fourier.dft2(feat))
        amp, pha = hs.amplitude, hs.phase
        for blk in self.amp_branch:
            amp = blk(amp)
        for blk in self.phase_branch:
            pha = blk(pha)
        spatial = fourier.idft2(fourier.reconstruct_full(fourier.HalfSpectrum(amp, pha), full_w))
        y = ops.relu(self.refine[0](spatial))
        y = ops.relu(self.refine[1](y))
        y = self.refine[2](y)
        pooled = ops.global_avg_pool(y, channels_last=True)
        z = ops.relu(self.fc2(ops.relu(self.fc1(pooled))))
        return z if batched else ops.reshape(z, z.shape[1:])


class EpsNet(Module):
    """Noise estimator: [z_t, condition, t/T] -> two ReLU hidden layers -> linear output of size M."""

    def __init__(self, prior_dim: int, rng: np.random.Generator, steps: int = 4, hidden: int | None = None):
        hidden = hidden or 2 * prior_dim
        self.prior_dim = prior_dim
        self.steps = steps
        self.fc1 = Linear(2 * prior_dim + 1, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, prior_dim, rng)

    def forward(self, z_t, t: int, cond) -> Tensor:
        z_t, cond = as_tensor(z_t), as_tensor(cond)
        if z_t.shape[-1] != self.prior_dim or cond.shape[-1] != self.prior_dim:
            raise ShapeError(f"eps_net: expected width {self.prior_dim}, got {z_t.shape} and {cond.shape}")
        lead = np.broadcast_shapes(z_t.shape[:-1], cond.shape[:-1])
        z_t = ops.add(z_t, np.zeros(lead + (1,)))
        cond = ops.add(cond, np.zeros(lead + (1,)))
        temb = np.full(lead + (1,), t / self.steps)
        h = ops.concat([z_t, cond, temb], axis=-1)
        h = ops.relu(self.fc1(h))
        h = ops.relu(self.fc2(h))
        return self.fc3(h)


@dataclass(frozen=True)
class DiffusionSchedule:
    """alpha[t-1] and alpha_bar[t-1] for t = 1..T; alpha_bar at t = 0 is 1."""

    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bar[t - 1])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")


def make_schedule(alpha_1: float = 0.99, alpha_T: float = 0.1, T: int = 4) -> DiffusionSchedule:
    """Linear interpolation from alpha_1 to alpha_T over T steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < alpha_T < alpha_1 < 1.0:
        raise ValueError(f"need 0 < alpha_T < alpha_1 < 1, got alpha_1={alpha_1}, alpha_T={alpha_T}")
    # linspace pins both endpoints exactly; T == 1 keeps alpha_1
    alpha = np.array([alpha_1]) if T == 1 else np.linspace(alpha_1, alpha_T, T)
    alpha_bar = np.cumprod(alpha)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return DiffusionSchedule(T, alpha, alpha_bar)


def noise_prior(z, sched: DiffusionSchedule, rng: np.random.Generator | None = None, eps: np.ndarray | None = None):
    """Draw z_T ~ N(sqrt(abar_T) z, (1 - abar_T) I). Returns (z_T, eps)."""
    z = as_tensor(z)
    if eps is None:
        if rng is None:
            raise ValueError("noise_prior needs either rng or eps")
        eps = rng.standard_normal(z.shape)
    eps = np.asarray(eps, dtype=np.float64)
    abar = sched.alpha_bar_at(sched.T)
    z_t = ops.add(ops.mul(z, np.sqrt(abar)), np.sqrt(1.0 - abar) * eps)
    return z_t, eps


def denoise_step(z_t, t: int, cond, eps_net, sched: DiffusionSchedule) -> Tensor:
    """z_{t-1} = (z_t - (1 - a_t) / sqrt(1 - abar_t) * eps(z_t, t, cond)) / sqrt(a_t)."""
    a = sched.alpha_at(t)
    abar = sched.alpha_bar_at(t)
    eps = eps_net(z_t, t, cond)
    coef = (1.0 - a) / np.sqrt(1.0 - abar)
    return ops.mul(ops.sub(z_t, ops.mul(eps, coef)), 1.0 / np.sqrt(a))


def generate_prior(start, cond, eps_net, sched: DiffusionSchedule) -> Tensor:
    """Apply :func:`denoise_step` for t = T, ..., 1."""
    z = as_tensor(start)
    for t in range(sched.T, 0, -1):
        z = denoise_step(z, t, cond, eps_net, sched)
    return z
