"""Two-stage training: joint UNet + teacher extractor, then prior generation.

Stage 1 fits the UNet and the teacher extractor on (input, ground truth).
Stage 2 freezes the teacher, learns to regenerate its prior from the input
alone (condition extractor + denoiser, backprop through all sampling steps)
and finetunes the UNet on the generated prior.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

from ..model import OSMamba
from ..prior import generate_prior, noise_prior
from ..tensor import ops
from ..tensor.core import backward, no_grad
from .metrics import psnr
from .optim import Adam, cosine_lr

LOG_FIELDS = ("step", "loss", "loss_img", "loss_distill", "lr", "psnr_val")


class StageError(RuntimeError):
    """Stage 2 was requested on a model that has not finished stage 1."""


@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 2000
    # 2e-4 suits long schedules; the short desk runs need a larger step
    lr_max: float = 5e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 4
    patch_size: int = 32
    seed: int = 0
    log_every: int = 50
    # stage 2: step-size multiplier for the condition extractor and denoiser,
    # which start far from their target while the UNet only needs finetuning
    prior_lr_scale: float = 6.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 1 or self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("steps, batch_size and patch_size must be positive")
        if self.prior_lr_scale <= 0:
            raise ValueError("prior_lr_scale must be positive")


def batches(pairs, batch_size: int, patch: int, rng: np.random.Generator) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless (i_error, i_gt) batches [B, 3, P, P]: reshuffled every epoch, random crops."""
    n = len(pairs)
    if n == 0:
        raise ValueError("no training pairs")
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            errs, gts = [], []
            for i in idx:
                gt, err = pairs[i]
                h, w = gt.shape[-2:]
                ph, pw = min(patch, h), min(patch, w)
                y = int(rng.integers(0, h - ph + 1))
                x = int(rng.integers(0, w - pw + 1))
                gts.append(gt[:, y : y + ph, x : x + pw])
                errs.append(err[:, y : y + ph, x : x + pw])
            if len({e.shape for e in errs}) > 1:
                raise ValueError("pairs in a batch must share a size; lower patch_size")
            yield np.stack(errs), np.stack(gts)


def stage1_step(model: OSMamba, opt: Adam, i_error, i_gt, lr: float) -> dict:
    z = model.teacher_prior(i_error, i_gt)
    out = model.correct(i_error, z)
    loss = ops.l1_mean(out, i_gt)
    opt.zero_grad()
    backward(loss)
    opt.step(lr)
    v = float(loss.data)
    return {"loss": v, "loss_img": v, "loss_distill": 0.0}


def stage2_step(model: OSMamba, opt: Adam, i_error, i_gt, lr: float, rng: np.random.Generator, eps_net=None) -> dict:
    """``eps_net`` overrides the model's denoiser (used to plug in an oracle)."""
    with no_grad():
        z = model.teacher_prior(i_error, i_gt)
    z_t, _ = noise_prior(z.data, model.schedule, rng)
    cond = model.condition(i_error)
    z0 = generate_prior(z_t, cond, eps_net or model.eps_net, model.schedule)
    out = model.correct(i_error, z0)
    loss_img = ops.l1_mean(out, i_gt)
    loss_distill = ops.l1_mean(z0, z.data)
    loss = ops.add(loss_img, loss_distill)
    opt.zero_grad()
    backward(loss)
    opt.step(lr)
    return {"loss": float(loss.data), "loss_img": float(loss_img.data), "loss_distill": float(loss_distill.data)}


def stage_parameters(model: OSMamba, stage: int) -> list:
    if stage == 1:
        return model.unet.parameters() + model.ddpe.parameters()
    return model.unet.parameters() + model.eps_net.parameters() + model.ddpe_star.parameters()


def stage_optimizer(model: OSMamba, cfg: TrainConfig) -> Adam:
    params = stage_parameters(model, cfg.stage)
    scales = None
    if cfg.stage == 2:
        n_unet = len(model.unet.parameters())
        scales = [1.0] * n_unet + [cfg.prior_lr_scale] * (len(params) - n_unet)
    return Adam(params, cfg.lr_max, (cfg.beta1, cfg.beta2), cfg.eps, scales)


def prepare_stage2(model: OSMamba) -> None:
    if model.stage < 1:
        raise StageError("stage 2 needs a model trained by stage 1 (load a stage-1 checkpoint)")
    model.ddpe.requires_grad_(False)
    if model.stage == 1:
        model.init_condition_from_teacher()


def evaluate(model: OSMamba, pairs, stage: int, seed: int = 0) -> float:
    """Mean PSNR: teacher prior after stage 1, ground-truth-free inference after stage 2."""
    scores = []
    for k, (gt, err) in enumerate(pairs):
        if stage == 1:
            with no_grad():
                out = np.clip(model.correct(err, model.teacher_prior(err, gt)).data, 0.0, 1.0)
        else:
            out = model.infer(err, seed + k)
        scores.append(psnr(out, gt))
    return float(np.mean(scores))


def train(model: OSMamba, pairs, cfg: TrainConfig, log: IO[str] | None = None, eval_pairs=None) -> list[dict]:
    """Run ``cfg.steps`` optimisation steps; returns one record per step.

    ``pairs`` is a list of (i_gt, i_error) arrays. When ``log`` is given a
    CSV row is written every ``cfg.log_every`` steps and at the end.
    """
    if cfg.stage == 2:
        prepare_stage2(model)
    rng = np.random.default_rng(cfg.seed)
    stream = batches(pairs, cfg.batch_size, cfg.patch_size, rng)
    opt = stage_optimizer(model, cfg)
    writer = None
    if log is not None:
        writer = csv.DictWriter(log, fieldnames=LOG_FIELDS)
        writer.writeheader()
    history = []
    for step in range(cfg.steps):
        lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min)
        err, gt = next(stream)
        if cfg.stage == 1:
            rec = stage1_step(model, opt, err, gt, lr)
        else:
            rec = stage2_step(model, opt, err, gt, lr, rng)
        rec = {"step": step, **rec, "lr": lr, "psnr_val": float("nan")}
        last = step == cfg.steps - 1
        if writer is not None and (last or (step + 1) % cfg.log_every == 0):
            rec["psnr_val"] = evaluate(model, eval_pairs or pairs, cfg.stage, cfg.seed)
            writer.writerow(rec)
            log.flush()
        history.append(rec)
    model.ddpe.requires_grad_(True)
    model.stage = max(model.stage, cfg.stage)
    return history
