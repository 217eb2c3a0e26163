"""Versioned JSON experiment configuration."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .lif import LifParams
from .train.config import TrainConfig, default_config
from .train.data import TASKS

CONFIG_VERSION = 1
MODELS = ("qif", "lif_direct")
_TOP_FIELDS = {"version", "task", "model", "train", "lif", "output_dir"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    model: str = "qif"
    train: TrainConfig = field(default_factory=TrainConfig)
    lif: LifParams = field(default_factory=LifParams)
    output_dir: str | None = None
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        d = {
            "version": self.version,
            "task": self.task,
            "model": self.model,
            "train": _plain(dataclasses.asdict(self.train)),
            "lif": _plain(dataclasses.asdict(self.lif)),
        }
        d["train"].pop("task")
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace_train(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **kw))


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(cls, section: str, raw: dict) -> dict:
    """Check names and basic types of a section against the dataclass ``cls``."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for k, v in raw.items():
        if k not in names:
            raise ConfigError(f"{section}.{k}: unknown field")
        out[k] = _convert(f"{section}.{k}", hints[k], v)
    return out


def _convert(where: str, hint, v):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if v is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(where, inner[0], v)
    if origin is tuple:
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_convert(where, args[0], x) for x in v)
    if hint is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected true/false")
        return v
    if hint is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected an integer")
        return v
    if hint is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(v)
    if hint is str:
        if not isinstance(v, str):
            raise ConfigError(f"{where}: expected a string")
        return v
    return v


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    for k in raw:
        if k not in _TOP_FIELDS:
            raise ConfigError(f"{k}: unknown field")
    version = raw.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {version!r}")
    task = raw.get("task")
    if task not in TASKS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
    model = raw.get("model", "qif")
    if model not in MODELS:
        raise ConfigError(f"model: must be one of {', '.join(MODELS)}")
    if model == "lif_direct" and task.startswith("pinn_"):
        raise ConfigError("model: lif_direct cannot train PINN tasks (no exact input derivatives)")
    if model == "lif_direct" and task == "deeponet_poisson":
        raise ConfigError("model: lif_direct is only provided for the regression tasks")
    train_kw = _coerce(TrainConfig, "train", raw.get("train", {}))
    if "task" in train_kw:
        raise ConfigError("train.task: set the task at top level")
    lif_kw = _coerce(LifParams, "lif", raw.get("lif", {}))
    try:
        train = default_config(task, **train_kw)
    except ValueError as e:
        raise ConfigError(f"train: {e}") from None
    try:
        lif = LifParams(**lif_kw)
    except ValueError as e:
        raise ConfigError(f"lif: {e}") from None
    out = raw.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return ExperimentConfig(task, model, train, lif, out, version)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw)
