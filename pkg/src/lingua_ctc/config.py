"""Run configuration: flat `key = value` sections, lossless roundtrip."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import ConfigError, ModelConfig


@dataclass
class DataConfig:
    train: str = ""
    dev: str = ""
    test: str = ""
    vocab: str = ""


@dataclass
class ScheduleConfig:
    warmup_steps: int = 400
    factor: float = 1.0
    d_model: int = 0  # 0: follow the model width

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("schedule warmup_steps must be >= 1")
        if self.factor <= 0:
            raise ConfigError("schedule factor must be positive")
        if self.d_model < 0:
            raise ConfigError("schedule d_model must be >= 0")


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 1000
    batch_frames: int = 2000
    log_every: int = 50
    eval_every: int = 500
    checkpoint_every: int = 500
    clip_norm: float = 5.0
    out_dir: str = ""

    def __post_init__(self):
        for name in ("steps", "batch_frames", "log_every", "eval_every",
                     "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train {name} must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("train clip_norm must be positive")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = {
    "data": (DataConfig, "data"),
    "model": (ModelConfig, "model"),
    "schedule": (ScheduleConfig, "schedule"),
    "train": (TrainConfig, "train"),
}


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)  # repr roundtrips float64 exactly
    return str(value)


def _parse_value(raw: str, kind: type, where: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw, 10)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


def write_config(cfg: RunConfig, path) -> None:
    lines = []
    for section, (_, attr) in _SECTIONS.items():
        lines.append(f"[{section}]")
        obj = getattr(cfg, attr)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def read_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    out = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        cls, attr = _SECTIONS[section]
        kinds = _FIELD_TYPES[cls]
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in kinds:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            kwargs[key] = _parse_value(raw, kinds[key], f"{path} [{section}] {key}")
        try:
            out[attr] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path} [{section}]: {exc}") from None
    for section, (cls, attr) in _SECTIONS.items():
        out.setdefault(attr, cls())
    return RunConfig(**out)


def _field_types(cls) -> dict:
    # `from __future__ import annotations` stringifies annotations; map the
    # names we actually use back to runtime types.
    table = {"int": int, "float": float, "str": str}
    return {f.name: table[f.type] if isinstance(f.type, str) else f.type
            for f in dataclasses.fields(cls)}


_FIELD_TYPES = {cls: _field_types(cls) for cls, _ in _SECTIONS.values()}
