"""Plain-text run configuration: one ``section.key = value`` per line, ``#`` comments.

Sections are ``model``, ``diffusion`` and ``train``; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..model import DiffusionConfig
from ..network import ModelConfig
from ..training.loop import TrainConfig

# the stage is chosen per command, never by the config file
_SKIP = {("train", "stage")}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def sections(self):
        return (("model", self.model), ("diffusion", self.diffusion), ("train", self.train))


def _fields(cls) -> dict[str, str]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


_SECTIONS = {"model": ModelConfig, "diffusion": DiffusionConfig, "train": TrainConfig}


def _convert(raw: str, typ: str, key: str):
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "str":
            return raw
        if typ.startswith("list[int]"):
            return [int(p) for p in raw.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc
    raise ConfigError(f"{key}: unsupported field type {typ}")


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in _SECTIONS or (section, name) in _SKIP or name not in _fields(_SECTIONS[section]):
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if name in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[section][name] = _convert(raw, _fields(_SECTIONS[section])[name], key)
    try:
        return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section, obj in cfg.sections():
        for f in dataclasses.fields(obj):
            if (section, f.name) in _SKIP:
                continue
            lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
