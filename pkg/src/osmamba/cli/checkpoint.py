"""Binary checkpoint format, all integers and floats little-endian:

    b"OSMB" | u32 version | u32 stage | u32 count
    count x ( u32 name_len | name (UTF-8) | u32 rank | rank x u64 dim | f64 data )
    u32 CRC32 of every preceding byte

Model and diffusion settings travel as extra tensors named ``config/<key>``:
numbers as rank-0 tensors, integer lists as rank-1, strings as rank-1 arrays
of code points under ``config/<key>#str``.
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from pathlib import Path

import numpy as np

from ..model import DiffusionConfig, OSMamba
from ..network import ModelConfig

MAGIC = b"OSMB"
VERSION = 1
CONFIG_PREFIX = "config/"
_STR = "#str"


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], stage: int) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, stage, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], int]:
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupted)")
    version, stage, count = struct.unpack_from("<III", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 8 * size > len(body):
                raise CheckpointError(f"tensor {name!r} runs past the end of the file")
            out[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return out, stage


def _config_tensors(model: OSMamba) -> dict[str, np.ndarray]:
    out = {}
    for section, cfg in (("model", model.cfg), ("diffusion", model.diffusion)):
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            key = f"{CONFIG_PREFIX}{section}.{f.name}"
            if isinstance(v, str):
                out[key + _STR] = np.array([ord(ch) for ch in v], dtype=np.float64)
            else:
                out[key] = np.asarray(v, dtype=np.float64)
    return out


def _restore_configs(tensors: dict[str, np.ndarray]) -> tuple[ModelConfig, DiffusionConfig]:
    values: dict[str, dict] = {"model": {}, "diffusion": {}}
    for name, arr in tensors.items():
        if not name.startswith(CONFIG_PREFIX):
            continue
        key = name[len(CONFIG_PREFIX) :]
        if key.endswith(_STR):
            key, v = key[: -len(_STR)], "".join(chr(int(c)) for c in arr)
        elif arr.ndim == 1:
            v = [int(c) for c in arr]
        else:
            v = float(arr)
        section, _, field = key.partition(".")
        if section not in values:
            raise CheckpointError(f"unknown config section in {name!r}")
        values[section][field] = v
    out = []
    for section, cls in (("model", ModelConfig), ("diffusion", DiffusionConfig)):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values[section]:
                continue
            v = values[section][f.name]
            kwargs[f.name] = int(v) if f.type == "int" else v
        out.append(cls(**kwargs))
    return out[0], out[1]


def model_tensors(model: OSMamba) -> dict[str, np.ndarray]:
    return {**model.state_dict(), **_config_tensors(model)}


def save(path, model: OSMamba) -> None:
    Path(path).write_bytes(encode(model_tensors(model), model.stage))


def load(path) -> OSMamba:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    tensors, stage = decode(blob)
    cfg, diffusion = _restore_configs(tensors)
    model = OSMamba(cfg, diffusion)
    params = {k: v for k, v in tensors.items() if not k.startswith(CONFIG_PREFIX)}
    try:
        model.load_state_dict(params, strict=True)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match the model: {exc}") from exc
    model.stage = stage
    return model
