"""Run configuration: one JSON document with data, split, model, loss and train sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SynthConfig
from .losses import LossWeights
from .network import ModelConfig, published_model_config


class ConfigError(ValueError):
    pass


@dataclass
class SplitConfig:
    protocol: str = "rate"  # rate | kfold
    rate: float = 0.10
    K: int = 10
    fold: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("rate", "kfold"):
            raise ConfigError(f"unknown split protocol {self.protocol!r}")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    gamma: float = 0.6
    seed: int = 0
    track_clips: int = 64  # training normal clips used for the per-epoch distance trace

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.lr <= 0:
            raise ConfigError("epochs >= 1, batch_size >= 2 and lr > 0 are required")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")


@dataclass
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_seed: int = 0

    def __post_init__(self):
        if (self.data.frame_size, self.data.channels) != (self.model.frame_size, self.model.channels):
            raise ConfigError("data and model disagree on frame size or channel count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"data": SynthConfig, "split": SplitConfig, "model": ModelConfig, "loss": LossWeights, "train": TrainConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        try:
            for name, typ in sections.items():
                sub = d.get(name, {})
                bad = set(sub) - {f.name for f in fields(typ)}
                if bad:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
                kw[name] = typ(**sub)
        except (TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from err
        if "data_seed" in d:
            kw["data_seed"] = int(d["data_seed"])
        return cls(**kw)


def published_profile() -> RunConfig:
    """Hyperparameters at the published scale (256x256 frames, C=256, 60 epochs)."""
    return RunConfig(
        data=SynthConfig(frame_size=256, object_size=32, speed=4.0),
        model=published_model_config(),
        train=TrainConfig(),
    )


def desk_profile() -> RunConfig:
    """CPU-sized defaults used by the bundled synthetic benchmark."""
    return RunConfig(train=TrainConfig(epochs=15, lr=1e-3))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    d = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        target = d
        for p in parts[:-1]:
            if p not in target or not isinstance(target[p], dict):
                raise ConfigError(f"unknown config section in {key!r}")
            target = target[p]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[parts[-1]] = value
    return RunConfig.from_dict(d)


def load_config(path=None, profile: str = "desk", overrides=None) -> RunConfig:
    base = published_profile() if profile == "published" else desk_profile()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        merged = base.to_dict()
        for section, values in doc.items():
            if isinstance(values, dict) and isinstance(merged.get(section), dict):
                merged[section].update(values)
            else:
                merged[section] = values
        base = RunConfig.from_dict(merged)
    return apply_overrides(base, overrides)
