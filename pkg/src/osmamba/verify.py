"""Quick oracle and invariant checks, one group per module.

Each check returns (passed, detail). ``run`` executes the requested groups
and returns rows of (module, check, passed, detail, seconds).
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import fourier, scan
from .blocks import OSSSM, OSSSMConfig
from .model import OSMamba
from .network import ModelConfig, UNet
from .prior import generate_prior, make_schedule
from .ssm import selective_scan
from .tensor import ops
from .tensor.conv import conv2d
from .tensor.core import Tensor
from .tensor.gradcheck import gradient_check
from .training.metrics import psnr, ssim
from .training.optim import Adam, cosine_lr

Check = Callable[[], tuple[bool, str]]


def _rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# tensor ---------------------------------------------------------------------


def _tensor_grad() -> tuple[bool, str]:
    rng = _rng()
    w = rng.normal(size=(4, 3))

    def f(x):
        y = ops.layer_norm(ops.softplus(ops.matmul(x, w)), np.ones(3), np.zeros(3))
        return ops.sum(ops.mul(y, ops.sigmoid(y)))

    err = gradient_check(f, rng.normal(size=(2, 4)))
    return err < 1e-4, f"rel err {err:.1e}"


def _conv_oracle() -> tuple[bool, str]:
    rng = _rng()
    x = rng.normal(size=(2, 5, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    out = conv2d(x, k, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * k[o])
    err = float(np.max(np.abs(out - ref)))
    return err < 1e-12, f"max |diff| {err:.1e}"


# fourier ---------------------------------------------------------------------


def _fft_oracle() -> tuple[bool, str]:
    x = _rng().normal(size=(6, 8, 2))
    err = float(np.max(np.abs(fourier.fft2_array(x) - fourier.naive_dft2(x))))
    return err < 1e-9, f"max |diff| {err:.1e}"


def _half_roundtrip() -> tuple[bool, str]:
    x = _rng().normal(size=(8, 6, 3))
    hs = fourier.half_spectrum(fourier.dft2(x))
    back = fourier.idft2(fourier.reconstruct_full(hs, 6)).data
    err = float(np.max(np.abs(back - x)))
    return err < 1e-12, f"max |diff| {err:.1e}"


def _parseval() -> tuple[bool, str]:
    x = _rng().normal(size=(8, 8, 1))
    f = fourier.fft2_array(x)
    err = abs(float(np.sum(x**2)) - float(np.sum(np.abs(f) ** 2)) / 64) / float(np.sum(x**2))
    return err < 1e-12, f"rel err {err:.1e}"


# scan ------------------------------------------------------------------------


def _scan_bijection() -> tuple[bool, str]:
    for kind in scan.ALL_KINDS:
        for h, w in ((1, 1), (3, 5), (8, 5), (7, 7)):
            t = scan.make_trajectory(kind, h, w)
            if sorted(t.forward.tolist()) != list(range(h * w)):
                return False, f"{kind} {h}x{w} not a permutation"
            x = _rng().normal(size=(h, w, 2))
            if not np.array_equal(scan.merge(scan.scan(x, t), t).data, x):
                return False, f"{kind} {h}x{w} merge(scan(x)) != x"
            if kind in scan.OS_KINDS:
                cells = np.array(t.cells())
                if len(cells) > 1 and np.max(np.abs(np.diff(cells, axis=0))) > 1:
                    return False, f"{kind} {h}x{w} jumps"
    return True, f"{len(scan.ALL_KINDS)} kinds x 4 grids"


# ssm -------------------------------------------------------------------------


def _scan_oracle() -> tuple[bool, str]:
    rng = _rng()
    L, C, N = 12, 3, 4
    x = rng.normal(size=(L, C))
    d = rng.uniform(0.01, 0.5, size=(L, C))
    a = -rng.uniform(0.5, 2.0, size=(C, N))
    b = rng.normal(size=(L, N))
    c = rng.normal(size=(L, N))
    y = selective_scan(x, d, a, b, c).data
    h = np.zeros((C, N))
    ref = np.zeros((L, C))
    for k in range(L):
        h = np.exp(d[k][:, None] * a) * h + d[k][:, None] * b[k][None, :] * x[k][:, None]
        ref[k] = h @ c[k]
    err = float(np.max(np.abs(y - ref)))
    return err < 1e-12, f"max |diff| {err:.1e}"


def _scan_grad() -> tuple[bool, str]:
    rng = _rng()
    d = rng.uniform(0.05, 0.5, size=(6, 2))
    a = -rng.uniform(0.5, 2.0, size=(2, 3))
    b, c = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    err = gradient_check(lambda x: ops.sum(ops.square(selective_scan(x, d, a, b, c))), rng.normal(size=(6, 2)))
    return err < 1e-4, f"rel err {err:.1e}"


# blocks / network ------------------------------------------------------------


def _osssm_grad() -> tuple[bool, str]:
    rng = _rng()
    blk = OSSSM(OSSSMConfig(2, state_size=2, prior_dim=3), rng)
    z = rng.normal(size=(3,))
    err = gradient_check(lambda x: ops.sum(ops.square(blk(x, z))), rng.normal(size=(4, 4, 2)))
    return err < 1e-4, f"rel err {err:.1e}"


def _unet_identity() -> tuple[bool, str]:
    rng = _rng()
    net = UNet(ModelConfig(base_channels=2, state_size=2, prior_dim=4), rng)
    x = rng.uniform(size=(3, 12, 20))
    out = net(x, rng.normal(size=(4,))).data
    return bool(np.array_equal(out, x)), f"shape {out.shape}"


# prior -----------------------------------------------------------------------


def _schedule() -> tuple[bool, str]:
    s = make_schedule(0.99, 0.1, 4)
    ok = s.alpha[0] == 0.99 and s.alpha[-1] == 0.1 and abs(s.alpha_bar[-1] - 0.99 * (0.99 - 0.89 / 3) * (0.99 - 2 * 0.89 / 3) * 0.1) < 1e-15
    return bool(ok), f"alpha {np.round(s.alpha, 6).tolist()}"


def _oracle_recovery() -> tuple[bool, str]:
    rng = _rng()
    s = make_schedule()
    z = rng.normal(size=(16, 8))

    def eps_star(z_t, t, cond):
        return (z_t - np.sqrt(s.alpha_bar_at(t)) * z) / np.sqrt(1.0 - s.alpha_bar_at(t))

    z0 = generate_prior(rng.normal(size=z.shape), None, eps_star, s).data
    err = float(np.max(np.abs(z0 - z)))
    return err < 1e-9, f"max |diff| {err:.1e}"


# training / cli ----------------------------------------------------------------


def _metrics() -> tuple[bool, str]:
    a = _rng().uniform(size=(3, 16, 16))
    ok = psnr(a, a) == 100.0 and abs(psnr(a, a + 0.1) - 20.0) < 1e-9 and abs(ssim(a, a) - 1.0) < 1e-12
    return bool(ok), "cap, closed form, identity"


def _adam() -> tuple[bool, str]:
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0])
    opt.step()
    ok = abs(p.data[0] - (1.0 - 0.1 * 3.0 / (3.0 + 1e-8))) < 1e-15
    ok &= cosine_lr(0, 100) == 2e-4 and abs(cosine_lr(99, 100) - 1e-6) < 1e-9
    return bool(ok), "one step, lr endpoints"


def _checkpoint() -> tuple[bool, str]:
    from .cli.checkpoint import decode, encode, model_tensors

    m = OSMamba(ModelConfig(base_channels=2, state_size=2, prior_dim=4, prior_width=4), seed=3)
    blob = encode(model_tensors(m), 1)
    tensors, stage = decode(blob)
    ok = stage == 1 and encode(tensors, stage) == blob
    return bool(ok), f"{len(blob)} bytes"


def _infer_identity() -> tuple[bool, str]:
    m = OSMamba(ModelConfig(base_channels=2, state_size=2, prior_dim=4, prior_width=4), seed=0)
    x = _rng().uniform(size=(3, 16, 16))
    return bool(np.array_equal(m.infer(x, seed=0), x)), "untrained inference returns its input"


CHECKS: dict[str, list[tuple[str, Check]]] = {
    "tensor": [("gradient check", _tensor_grad), ("conv2d vs loops", _conv_oracle)],
    "fourier": [("fft vs naive DFT", _fft_oracle), ("half-spectrum roundtrip", _half_roundtrip), ("Parseval", _parseval)],
    "scan": [("bijection / inverse / continuity", _scan_bijection)],
    "ssm": [("recurrence vs loop", _scan_oracle), ("scan gradient", _scan_grad)],
    "blocks": [("OS-SSM gradient", _osssm_grad)],
    "network": [("identity at init", _unet_identity)],
    "prior": [("schedule", _schedule), ("oracle denoiser recovery", _oracle_recovery)],
    "training": [("psnr / ssim", _metrics), ("adam / cosine", _adam), ("identity inference", _infer_identity)],
    "cli": [("checkpoint roundtrip", _checkpoint)],
}


def run(module: str | None = None) -> list[tuple[str, str, bool, str, float]]:
    if module is not None and module not in CHECKS:
        raise KeyError(f"unknown module {module!r}; expected one of {sorted(CHECKS)}")
    rows = []
    for mod, checks in CHECKS.items():
        if module is not None and mod != module:
            continue
        for name, fn in checks:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crash is a failed check, not a crashed table
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            rows.append((mod, name, ok, detail, time.perf_counter() - t0))
    return rows


def format_table(rows) -> str:
    lines = [f"{'module':<10} {'check':<34} {'result':<6} {'time':>7}  detail"]
    for mod, name, ok, detail, secs in rows:
        lines.append(f"{mod:<10} {name:<34} {'PASS' if ok else 'FAIL':<6} {secs:6.2f}s  {detail}")
    return "\n".join(lines)
