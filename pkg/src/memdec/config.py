"""Run configuration: dataclasses plus the flat key=value config file format.

Desk-scale defaults are what actually run here; the full-scale values used for
the original large-corpus setting are noted per field for reference.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Bad config file or inconsistent option values."""


@dataclass
class TrainConfig:
    """Model dimensions and optimization settings.

    Full-scale reference values: embed 512, hidden 1024, cell width 1024,
    8 cells, batch 80, vocab cap 30000. Desk defaults below are sized for
    synthetic tasks on one CPU.
    """

    embed_dim: int = 32
    hidden_dim: int = 32           # encoder state size per direction
    cell_width: int = 32           # vector-state and memory cell width
    cells: int = 4                 # buffer rows
    align_dim: int = 0             # 0 means: use cell_width
    rho: float = 0.95
    epsilon: float = 1e-6
    clip_threshold: float = 1.0
    batch_size: int = 16           # full scale: 80
    dropout_rate: float = 0.5
    max_train_length: int = 50
    epochs: int = 10
    noise_std: float = 0.1         # std of the per-cell memory-init noise
    share_weights: bool = True     # one weight stream for read and write
    literal_init: bool = False     # divide by length after (not inside) the init tanh
    feedback: str = "tanh"         # baseline feedback transform: tanh | gru
    seed: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.clip_threshold <= 0:
            raise ConfigError(f"clip_threshold must be positive, got {self.clip_threshold}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if self.feedback not in ("tanh", "gru"):
            raise ConfigError(f"feedback must be tanh or gru, got {self.feedback!r}")
        for name in ("embed_dim", "hidden_dim", "cell_width", "cells", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def align(self) -> int:
        return self.align_dim if self.align_dim > 0 else self.cell_width


@dataclass
class RunConfig(TrainConfig):
    """TrainConfig plus task selection, corpus generation and decoding options."""

    variant: str = "memdec"        # memdec | baseline (baseline ignores `cells`)
    task: str = "copy"             # copy | reverse | digits2words
    train_size: int = 2000
    dev_size: int = 200
    min_len: int = 3
    max_len: int = 10
    dev_min_len: int = 0           # 0: same range as training
    dev_max_len: int = 0
    vocab_size: int = 20
    vocab_cap: int = 30000         # full-scale cap on learned vocabulary entries
    beam: int = 1
    max_decode_len: int = 40
    train_corpus: str = ""         # optional TSV path; generated when empty
    dev_corpus: str = ""

    def validate(self) -> None:
        super().validate()
        if self.variant not in ("memdec", "baseline"):
            raise ConfigError(f"variant must be memdec or baseline, got {self.variant!r}")
        if self.task not in ("copy", "reverse", "digits2words"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f"bad length range [{self.min_len}, {self.max_len}]")


def _parse_value(raw: str, target_type, key: str, lineno: int):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse {key} = {raw!r} as {target_type.__name__}") from None


def parse_config_text(text: str, cls=RunConfig):
    """Parse `key = value` lines (# comments allowed) into a config dataclass."""
    types = {f.name: f.type for f in fields(cls)}
    concrete = {f.name: (type(f.default) if f.default is not dataclasses.MISSING else str)
                for f in fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(raw, concrete[key], key, lineno)
    config = cls(**values)
    config.validate()
    return config


def load_config(path, cls=RunConfig):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), cls=cls)


def apply_overrides(config, overrides):
    """Apply `key=value` strings (CLI --set flags) on top of a parsed config."""
    concrete = {f.name: (type(f.default) if f.default is not dataclasses.MISSING else str)
                for f in fields(type(config))}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in concrete:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _parse_value(raw, concrete[key], key, 0))
    config.validate()
    return config


def config_to_dict(config) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict, cls=RunConfig):
    names = {f.name for f in fields(cls)}
    config = cls(**{k: v for k, v in data.items() if k in names})
    config.validate()
    return config
