"""
config.py
=========
Layered experiment configuration.

Resolution order: dataclass defaults, then a YAML file, then
``section.key=value`` overrides from the command line (values use YAML
scalar syntax). Unknown sections or keys and values of the wrong type raise
``ConfigError``; each section validates its own ranges.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .data import TASKS, TaskSpec
from .errors import ConfigError, DiscoError
from .inference import DecodeConfig
from .model import ModelConfig, default_length_bins
from .trainer import TrainConfig


@dataclass
class DataConfig:
    task: str = "copy"
    vocab_size: int = 32
    min_length: int = 3
    max_length: int = 12
    train_size: int = 10000
    dev_size: int = 200
    test_size: int = 500
    swap_prob: float = 0.3
    seed: int = 1
    corpus_dir: Optional[str] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"data.task must be one of {TASKS}")
        for name in ("train_size", "dev_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name} must be at least 1")

    def task_spec(self):
        return TaskSpec(self.task, self.vocab_size, self.min_length, self.max_length,
                        seed=self.seed, swap_prob=self.swap_prob)

    def sizes(self):
        return {"train": self.train_size, "dev": self.dev_size, "test": self.test_size}


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "decode": DecodeConfig}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    run_dir: str = "results/run"
    seed: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)

    def model_for(self, src_vocab_size, tgt_vocab_size):
        """Model config with vocabulary sizes and the length table filled in from the corpus."""
        bins = max(self.model.max_length_bins, default_length_bins(self.data.max_length))
        return dataclasses.replace(self.model, vocab_size_src=src_vocab_size, vocab_size_tgt=tgt_vocab_size,
                                   max_length_bins=min(bins, self.model.max_positions))


def _coerce(section, key, value, default):
    """Check ``value`` against the type of the field default."""
    where = f"{section}.{key}"
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{where} expects a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} expects a string, got {value!r}")
        return value
    if isinstance(default, (tuple, list)):
        if not isinstance(value, (tuple, list)) or len(value) != len(default):
            raise ConfigError(f"{where} expects a list of {len(default)} values, got {value!r}")
        return tuple(_coerce(section, key, v, d) for v, d in zip(value, default))
    return value


def _defaults(cls):
    values = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            values[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            values[f.name] = f.default_factory()
    return values


def _merge(tree, document, origin):
    if document is None:
        return tree
    if not isinstance(document, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    for key, value in document.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{origin}: section '{key}' must be a mapping")
            defaults = _defaults(SECTIONS[key])
            for name, item in value.items():
                if name not in defaults:
                    raise ConfigError(f"{origin}: unknown key '{key}.{name}'")
                tree[key][name] = _coerce(key, name, item, defaults[name])
        elif key in ("run_dir", "seed"):
            tree[key] = _coerce("top", key, value, _defaults(ExperimentConfig)[key])
        else:
            raise ConfigError(f"{origin}: unknown section '{key}'")
    return tree


def parse_override(text):
    """``section.key=value`` -> nested dict."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form section.key=value")
    path, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else ""
    parts = path.strip().split(".")
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) != 2:
        raise ConfigError(f"override '{text}' must name section.key")
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=()):
    tree = {name: {} for name in SECTIONS}
    tree.update({"run_dir": _defaults(ExperimentConfig)["run_dir"], "seed": 1})
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            document = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        _merge(tree, document, str(path))
    for text in overrides:
        _merge(tree, parse_override(text), "--set")
    try:
        sections = {name: cls(**tree[name]) for name, cls in SECTIONS.items()}
    except ConfigError:
        raise
    except DiscoError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**sections, run_dir=tree["run_dir"], seed=tree["seed"])


def config_digest(config):
    """SHA-1 of the canonical JSON form."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()


def save_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = config.to_dict()
    document["train"]["betas"] = list(document["train"]["betas"])
    path.write_text(yaml.safe_dump(document, sort_keys=False), encoding="utf-8")
    return path
