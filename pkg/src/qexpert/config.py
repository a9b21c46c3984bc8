"""YAML run configuration for the command-line front end."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import DESK_FILTERS, FULL_FILTERS, REGION_PRESETS
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class UserVectorConfig:
    source: str = "deepwalk"   # "deepwalk" or a vector-file path
    dim: int = 200
    walks_per_vertex: int = 10
    walk_length: int = 40
    window: int = 5
    negatives: int = 5
    epochs: int = 5


@dataclass
class WordVectorConfig:
    source: str = "skipgram"   # "skipgram", "random" or a vector-file path
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5


@dataclass
class GridConfig:
    models: list = field(default_factory=lambda: ["quser", "qa"])
    region_sizes: list = field(default_factory=lambda: [[2, 3, 4], [3, 4, 5], [2, 3, 4, 5]])
    optimizers: list = field(default_factory=lambda: ["sgd", "adam"])
    word_sources: list = field(default_factory=lambda: ["skipgram"])
    learning_rates: list = field(default_factory=lambda: [1e-4, 1e-5])


@dataclass
class RunConfig:
    data: dict[str, str]
    format: str = "tsv"
    tokenizer: str = "whitespace"
    min_count: int = 1
    words: WordVectorConfig = field(default_factory=WordVectorConfig)
    users: UserVectorConfig = field(default_factory=UserVectorConfig)
    preset: str = "desk"
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_k: int = 10
    eval_seeds: list = field(default_factory=lambda: [0])
    grid: GridConfig = field(default_factory=GridConfig)
    output: str = "runs/default"
    base_dir: Path = Path(".")

    def path(self, split: str) -> Path | None:
        p = self.data.get(split)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        p = Path(self.output)
        return p if p.is_absolute() else self.base_dir / p

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def validate(self):
        if "train" not in self.data:
            raise ConfigError("config needs data.train")
        for split in self.data:
            if not self.path(split).is_file():
                raise ConfigError(f"data.{split}: file not found: {self.path(split)}")
        for src in (self.words.source, self.users.source):
            if src not in ("skipgram", "random", "deepwalk") and not self.resolve(src).is_file():
                raise ConfigError(f"vector file not found: {self.resolve(src)}")
        out = self.output_dir
        probe = out
        while not probe.exists():
            probe = probe.parent
        if not os.access(probe, os.W_OK):
            raise ConfigError(f"output directory not writable: {out}")
        return self


def _sub(cls, d):
    d = d or {}
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return config_from_dict(raw, path.parent)


def config_from_dict(raw: dict, base_dir=Path(".")) -> RunConfig:
    raw = dict(raw)
    preset = raw.pop("preset", "desk")
    if preset not in ("desk", "full"):
        raise ConfigError(f"preset must be 'desk' or 'full', got {preset!r}")
    train_raw = dict(raw.pop("train", {}) or {})
    train_raw.setdefault("filters_per_size", FULL_FILTERS if preset == "full" else DESK_FILTERS)
    rs = train_raw.get("region_sizes")
    if isinstance(rs, str):
        if rs not in REGION_PRESETS:
            raise ConfigError(f"unknown region-size preset {rs!r}")
        train_raw["region_sizes"] = REGION_PRESETS[rs]
    try:
        train = _sub(TrainConfig, train_raw)
        words = _sub(WordVectorConfig, raw.pop("words", None))
        users = _sub(UserVectorConfig, raw.pop("users", None))
        grid = _sub(GridConfig, raw.pop("grid", None))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    train.word_dim = words.dim
    train.user_dim = users.dim
    data = raw.pop("data", None)
    if not isinstance(data, dict):
        raise ConfigError("config needs a data mapping of split -> path")
    known = {"format", "tokenizer", "min_count", "eval_k", "eval_seeds", "output"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(data={k: str(v) for k, v in data.items()}, words=words, users=users,
                     preset=preset, train=train, grid=grid, base_dir=Path(base_dir), **raw)
