"""``osmamba`` command line: synth, train, infer, eval, verify, scan-dump."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .. import scan
from ..model import OSMamba
from ..training.data import MODES, SynthSpec, synthesize_pair
from ..training.loop import StageError, train
from ..training.metrics import psnr, ssim
from .checkpoint import CheckpointError, load, save
from .config import ConfigError, RunConfig, load_config
from .imageio import ImageError, load_pairs, load_png, find_pairs, save_png

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IMAGE = 3
EXIT_CHECKPOINT = 4
EXIT_CONFIG = 5
EXIT_STAGE = 6
EXIT_VERIFY = 7
EXIT_MISSING = 8


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    spec = SynthSpec(size=args.size, mode=args.mode)
    for k in range(args.count):
        gt, err = synthesize_pair(spec, rng)
        save_png(out / f"{k:04d}_gt.png", gt)
        save_png(out / f"{k:04d}_in.png", err)
    print(f"wrote {args.count} pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.train.stage = args.stage
    if args.stage == 2 and not args.init:
        raise StageError("stage 2 needs --init with a stage-1 checkpoint")
    if args.init:
        model = load(args.init)
    else:
        model = OSMamba(cfg.model, cfg.diffusion, seed=cfg.train.seed)
    pairs = load_pairs(args.data)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.csv")
    with open(log_path, "w", newline="") as log:
        hist = train(model, pairs, cfg.train, log=log)
    save(args.out, model)
    last = hist[-1]
    print(f"stage {args.stage}: {len(hist)} steps, final loss {last['loss']:.5f}, checkpoint {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load(args.ckpt)
    img = load_png(args.inp)
    save_png(args.out, model.infer(img, args.seed))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load(args.ckpt)
    rows = []
    for k, (name, inp, gt_path) in enumerate(find_pairs(args.data)):
        err, gt = load_png(inp), load_png(gt_path)
        out = model.infer(err, args.seed + k)
        rows.append((name, psnr(err, gt), psnr(out, gt), ssim(out, gt)))
    print(f"{'image':<12} {'psnr_in':>8} {'psnr':>8} {'ssim':>7}")
    for name, p_in, p, s in rows:
        print(f"{name:<12} {p_in:8.3f} {p:8.3f} {s:7.4f}")
    means = np.mean([r[1:] for r in rows], axis=0)
    print(f"{'mean':<12} {means[0]:8.3f} {means[1]:8.3f} {means[2]:7.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from ..verify import format_table, run

    rows = run(args.module)
    print(format_table(rows))
    failed = sum(not r[2] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_scan_dump(args) -> int:
    t = scan.make_trajectory(args.kind, args.rows, args.cols)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "row", "col"])
        for k, (r, c) in enumerate(t.cells()):
            w.writerow([k, r, c])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osmamba", description="Exposure correction with spectral state-space blocks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic (ground truth, exposure error) PNG pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--mode", choices=MODES, default="under")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="run training stage 1 or 2")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="checkpoint to start from (required for stage 2)")
    s.add_argument("--log", help="CSV training log (default: <out>.log.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="correct one PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR / SSIM over a directory of pairs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", help="run the oracle / invariant checks")
    s.add_argument("--module")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("scan-dump", help="export a scan trajectory as CSV")
    s.add_argument("--kind", choices=scan.ALL_KINDS, required=True)
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scan_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    errors = (
        (ImageError, EXIT_IMAGE),
        (CheckpointError, EXIT_CHECKPOINT),
        (ConfigError, EXIT_CONFIG),
        (StageError, EXIT_STAGE),
        (FileNotFoundError, EXIT_MISSING),
    )
    try:
        return args.func(args)
    except tuple(e for e, _ in errors) as exc:
        code = next(c for e, c in errors if isinstance(exc, e))
        print(f"osmamba {args.command}: {exc}", file=sys.stderr)
        return code
    except (ValueError, KeyError, OSError) as exc:
        print(f"osmamba {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
