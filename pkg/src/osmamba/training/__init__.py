from .data import MODES, SynthSpec, expose, make_dataset, render_scene, synthesize_pair
from .loop import (
    LOG_FIELDS,
    StageError,
    TrainConfig,
    batches,
    evaluate,
    prepare_stage2,
    stage1_step,
    stage2_step,
    stage_optimizer,
    stage_parameters,
    train,
)
from .metrics import psnr, ssim
from .optim import Adam, cosine_lr
