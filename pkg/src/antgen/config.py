"""Flat key/value run configuration shared by every CLI command."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig
from .training import TrainSchedule


class ConfigError(ValueError):
    """Unknown key, wrong value type or unreadable config file."""


_MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"}
_SCHEDULE_KEYS = {f.name: f for f in dataclasses.fields(TrainSchedule)}


@dataclass
class RunConfig:
    corpus: str | None = None
    labels: str | None = None
    heldout: str | None = None
    out_dir: str = "runs/default"
    seed: int = 0
    min_freq: int = 1
    temperatures: list[float] = field(default_factory=lambda: [0.5, 0.75, 1.0, 1.25, 1.5, 2.0])
    model: dict[str, Any] = field(default_factory=dict)
    schedule: dict[str, Any] = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)

    def train_schedule(self) -> TrainSchedule:
        return TrainSchedule(**self.schedule)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def set(self, key: str, value: Any) -> None:
        """Assign one flat key, checking the name and coercing to the declared type."""
        if key in _MODEL_KEYS:
            self.model[key] = _coerce(key, value, _MODEL_KEYS[key].type)
        elif key in _SCHEDULE_KEYS:
            self.schedule[key] = _coerce(key, value, _SCHEDULE_KEYS[key].type)
        elif key in _RUN_KEYS:
            setattr(self, key, _coerce(key, value, _RUN_KEYS[key]))
        else:
            raise ConfigError(f"unknown config key {key!r}")

    def as_flat(self) -> dict[str, Any]:
        flat = {k: getattr(self, k) for k in _RUN_KEYS}
        flat.update(self.model)
        flat.update(self.schedule)
        return flat


_RUN_KEYS = {
    "corpus": "str | None",
    "labels": "str | None",
    "heldout": "str | None",
    "out_dir": "str",
    "seed": "int",
    "min_freq": "int",
    "temperatures": "list[float]",
}


def _coerce(key: str, value: Any, declared: Any) -> Any:
    kind = declared if isinstance(declared, str) else getattr(declared, "__name__", str(declared))
    optional = "None" in kind
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: value may not be null")
    base = kind.replace("| None", "").strip()
    if base == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if base == "list[float]":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise ConfigError(f"{key}: unsupported type {kind}")


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat mapping of keys to values")
    cfg = RunConfig()
    for key, value in doc.items():
        if isinstance(value, dict):
            raise ConfigError(f"{key}: nested sections are not supported")
        cfg.set(str(key), value)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.as_flat(), sort_keys=True)
