"""Procedural scenes and a parametric exposure model for training pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("under", "over", "mixed")


@dataclass
class SynthSpec:
    size: int = 32
    mode: str = "under"
    gamma_range: tuple[float, float] | None = None
    gain_range: tuple[float, float] | None = None
    n_shapes: int = 4
    n_waves: int = 3
    # fixed exposure, bypasses the random draw (gamma=1, gain=1 is the identity)
    gamma: float | None = None
    gain: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown exposure mode {self.mode!r}, expected one of {MODES}")
        if self.size < 1:
            raise ValueError("size must be positive")


# (gamma range, gain range) per mode, all inside gamma in [0.3, 3], gain in [0.25, 4]
_RANGES = {
    "under": ((1.4, 3.0), (0.25, 0.6)),
    "over": ((0.3, 0.7), (1.6, 4.0)),
}


def render_scene(size: int, rng: np.random.Generator, n_shapes: int = 4, n_waves: int = 3) -> np.ndarray:
    """Smooth colour gradient + flat shapes + low-frequency texture, [3, S, S] in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    for _ in range(n_shapes):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.3)
        if rng.uniform() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < rng.uniform(0.08, 0.3))
        img = np.where(mask[None], color[:, None, None], img)
    tex = np.zeros((size, size))
    for _ in range(n_waves):
        fy, fx = rng.uniform(-4, 4, size=2)
        tex += np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    img = img + 0.05 * tex[None] / max(n_waves, 1)
    return np.clip(img, 0.0, 1.0)


def expose(img: np.ndarray, gamma: float, gain: float) -> np.ndarray:
    return np.clip(gain * np.power(img, gamma), 0.0, 1.0)


def smooth_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    """A soft [0, 1] blend map from a random low-frequency field."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    field = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(-1.5, 1.5, size=2)
        field += np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    return 1.0 / (1.0 + np.exp(-3.0 * field))


def _draw(rng: np.random.Generator, mode: str, spec: SynthSpec) -> tuple[float, float]:
    g_rng, k_rng = _RANGES[mode]
    g_rng = spec.gamma_range or g_rng
    k_rng = spec.gain_range or k_rng
    return float(rng.uniform(*g_rng)), float(rng.uniform(*k_rng))


def synthesize_pair(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns (i_gt, i_error), both [3, S, S] float64 in [0, 1]."""
    gt = render_scene(spec.size, rng, spec.n_shapes, spec.n_waves)
    if spec.gamma is not None or spec.gain is not None:
        gamma = 1.0 if spec.gamma is None else spec.gamma
        gain = 1.0 if spec.gain is None else spec.gain
        return gt, expose(gt, gamma, gain)
    if spec.mode in ("under", "over"):
        return gt, expose(gt, *_draw(rng, spec.mode, spec))
    under = expose(gt, *_draw(rng, "under", spec))
    over = expose(gt, *_draw(rng, "over", spec))
    m = smooth_mask(spec.size, rng)[None]
    return gt, m * under + (1.0 - m) * over


def make_dataset(count: int, spec: SynthSpec, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [synthesize_pair(spec, rng) for _ in range(count)]
