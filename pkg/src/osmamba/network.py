"""Four-level UNet of OS-SSBs with a global input-to-output residual."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import OSSB, Conv2d, Linear, OSSSMConfig
from .tensor import ops
from .tensor.core import ShapeError, Tensor, as_tensor
from .tensor.nn import Module

# three 2x downsamplings and an even bottleneck for the half spectrum
MULTIPLE = 16


@dataclass
class ModelConfig:
    base_channels: int = 8
    levels: int = 4
    blocks_per_level: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    state_size: int = 8
    prior_dim: int = 32
    expansion: float = 2.0
    inner_expansion: int = 1
    heads: int = 1
    scan_mode: str = "os"
    prior_width: int = 16
    prior_downsample: int = 4

    def __post_init__(self):
        if self.levels != 4:
            raise ValueError("the UNet has exactly 4 levels")
        if len(self.blocks_per_level) != 4 or min(self.blocks_per_level) < 1:
            raise ValueError(f"blocks_per_level needs 4 positive entries, got {self.blocks_per_level}")
        if self.base_channels < 1 or self.state_size < 1 or self.prior_dim < 1:
            raise ValueError("channel, state and prior sizes must be positive")

    @property
    def widths(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)


class UNet(Module):
    """conv3x3 -> 3 encoder levels (OS-SSB, pixel-unshuffle + 1x1) -> bottleneck ->
    3 decoder levels (1x1 + pixel-shuffle, concat skip, 1x1 fuse, OS-SSB) -> conv3x3 + input."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.widths

        def level(i: int) -> list[OSSB]:
            sc = OSSSMConfig(
                in_channels=w[i],
                inner_channels=w[i] * cfg.inner_expansion,
                state_size=cfg.state_size,
                prior_dim=cfg.prior_dim,
                scan_mode=cfg.scan_mode,
            )
            return [OSSB(sc, rng, cfg.expansion, cfg.heads) for _ in range(cfg.blocks_per_level[i])]

        self.conv_in = Conv2d(3, w[0], 3, rng)
        self.enc = [level(0), level(1), level(2)]
        self.down = [Linear(4 * w[i], w[i + 1], rng, bias=False) for i in range(3)]
        self.bottleneck = level(3)
        self.up = [Linear(w[i + 1], 4 * w[i], rng, bias=False) for i in range(3)]
        self.fuse = [Linear(2 * w[i], w[i], rng, bias=False) for i in range(3)]
        self.dec = [level(0), level(1), level(2)]
        self.conv_out = Conv2d(w[0], 3, 3, rng)
        self.conv_out.weight.data[:] = 0.0
        self.conv_out.bias.data[:] = 0.0

    def forward_nhwc(self, x: Tensor, z) -> Tensor:
        """``x`` is [B, H, W, 3] with H, W multiples of 16; ``z`` is [B, M]."""
        feat = self.conv_in(x)
        skips = []
        for i in range(3):
            for blk in self.enc[i]:
                feat = blk(feat, z)
            skips.append(feat)
            feat = self.down[i](ops.pixel_unshuffle(feat, 2, channels_last=True))
        for blk in self.bottleneck:
            feat = blk(feat, z)
        for i in (2, 1, 0):
            feat = ops.pixel_shuffle(self.up[i](feat), 2, channels_last=True)
            feat = self.fuse[i](ops.concat([feat, skips[i]], axis=-1))
            for blk in self.dec[i]:
                feat = blk(feat, z)
        return ops.add(x, self.conv_out(feat))

    def forward(self, image, z) -> Tensor:
        """Correct ``image`` ([3, H, W] or [B, 3, H, W]) under prior ``z`` ([M] or [B, M])."""
        image = as_tensor(image)
        batched = image.ndim == 4
        if image.ndim not in (3, 4) or image.shape[-3] != 3:
            raise ShapeError(f"expected an RGB image [3, H, W] or [B, 3, H, W], got {image.shape}")
        x = image if batched else ops.reshape(image, (1,) + image.shape)
        z = as_tensor(z)
        if z.ndim == 1:
            z = ops.reshape(z, (1, z.shape[0]))
        h, w = x.shape[-2], x.shape[-1]
        x = ops.permute(x, (0, 2, 3, 1))
        ph, pw = (-h) % MULTIPLE, (-w) % MULTIPLE
        x = ops.pad_reflect(x, ph, pw, channels_last=True)
        y = self.forward_nhwc(x, z)
        if ph or pw:
            y = y[:, :h, :w, :]
        y = ops.permute(y, (0, 3, 1, 2))
        return y if batched else ops.reshape(y, y.shape[1:])
