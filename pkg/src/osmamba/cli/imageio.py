"""8-bit RGB PNG in and out; arrays are float64 [3, H, W] in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(ValueError):
    pass


_EIGHT_BIT = {"RGB", "RGBA", "L", "LA", "P"}


def load_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageError(f"{path}: not a PNG ({im.format})")
            if im.mode not in _EIGHT_BIT:
                raise ImageError(f"{path}: unsupported pixel mode {im.mode} (8-bit RGB only)")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageError(f"{path}: cannot decode PNG: {exc}") from exc
    return np.transpose(arr / 255.0, (2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageError(f"expected a [3, H, W] image, got {img.shape}")
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(np.transpose(to_uint8(img), (1, 2, 0))).save(Path(path), format="PNG")


def find_pairs(data_dir) -> list[tuple[str, Path, Path]]:
    """``<name>_in.png`` / ``<name>_gt.png`` pairs, sorted by name."""
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    out = []
    for inp in sorted(root.glob("*_in.png")):
        name = inp.name[: -len("_in.png")]
        gt = root / f"{name}_gt.png"
        if not gt.exists():
            raise FileNotFoundError(f"missing ground truth {gt} for {inp}")
        out.append((name, inp, gt))
    if not out:
        raise FileNotFoundError(f"no *_in.png / *_gt.png pairs in {root}")
    return out


def load_pairs(data_dir) -> list[tuple[np.ndarray, np.ndarray]]:
    """[(i_gt, i_error)] from a directory written by ``synth``."""
    return [(load_png(gt), load_png(inp)) for _, inp, gt in find_pairs(data_dir)]
