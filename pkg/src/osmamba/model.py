"""The full model: UNet, teacher extractor, condition extractor and denoiser."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelConfig, UNet
from .prior import DiffusionSchedule, EpsNet, PriorExtractor, generate_prior, make_schedule
from .tensor.core import Tensor, as_tensor, no_grad
from .tensor.nn import Module


@dataclass
class DiffusionConfig:
    alpha_1: float = 0.99
    alpha_T: float = 0.1
    T: int = 4


class OSMamba(Module):
    def __init__(self, cfg: ModelConfig | None = None, diffusion: DiffusionConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        self.diffusion = diffusion or DiffusionConfig()
        self.seed = seed
        # highest training stage completed: 0 untrained, 1 teacher fitted, 2 generator fitted
        self.stage = 0
        rng = np.random.default_rng(seed)
        c = self.cfg
        self.unet = UNet(c, rng)
        self.ddpe = PriorExtractor(2, c.prior_dim, rng, c.prior_width, c.prior_downsample)
        self.ddpe_star = PriorExtractor(1, c.prior_dim, rng, c.prior_width, c.prior_downsample)
        self.eps_net = EpsNet(c.prior_dim, rng, steps=self.diffusion.T)

    @property
    def schedule(self) -> DiffusionSchedule:
        d = self.diffusion
        return make_schedule(d.alpha_1, d.alpha_T, d.T)

    def teacher_prior(self, i_error, i_gt) -> Tensor:
        return self.ddpe(i_error, i_gt)

    def condition(self, i_error) -> Tensor:
        return self.ddpe_star(i_error)

    def generate(self, start, cond) -> Tensor:
        return generate_prior(start, cond, self.eps_net, self.schedule)

    def correct(self, i_error, z) -> Tensor:
        return self.unet(i_error, z)

    def init_condition_from_teacher(self) -> None:
        """Copy the teacher weights into the condition extractor, except its input conv."""
        teacher = dict(self.ddpe.named_parameters())
        for name, p in self.ddpe_star.named_parameters():
            if name.startswith("conv_in."):
                continue
            p.data = teacher[name].data.copy()

    def infer(self, i_error, seed: int) -> np.ndarray:
        """Ground-truth-free correction: z_T ~ N(0, I), condition from the input only."""
        i_error = as_tensor(i_error)
        with no_grad():
            batch = (i_error.shape[0],) if i_error.ndim == 4 else ()
            rng = np.random.default_rng(seed)
            start = rng.standard_normal(batch + (self.cfg.prior_dim,))
            cond = self.condition(i_error)
            z0 = self.generate(start, cond)
            out = self.correct(i_error, z0)
        return np.clip(out.data, 0.0, 1.0)
