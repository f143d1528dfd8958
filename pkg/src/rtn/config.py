"""YAML run configuration mapping one-to-one onto ModelConfig / TrainConfig / LossWeights.

    model:
      encoder_channels: 64
      window_size: 8
    train:
      epochs: 20
      crop: 256
      loss_weights: {lambda_1: 1.0, lambda_p: 1.0, lambda_G: 0.01}

Missing keys keep their defaults; unknown keys are rejected.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .model.network import Mode, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def parse_config(data: dict | None, mode: Mode | str | None = None) -> tuple[ModelConfig, TrainConfig]:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with optional 'model' and 'train' sections")
    unknown = set(data) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model_d = dict(data.get("model") or {})
    if mode is not None:
        model_d["mode"] = Mode(mode).value
    try:
        model_cfg = ModelConfig.from_dict(model_d)
        train_cfg = TrainConfig.from_dict(dict(data.get("train") or {}))
        train_cfg.validate_for(model_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return model_cfg, train_cfg


def load_config(path, mode=None) -> tuple[ModelConfig, TrainConfig]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, mode)


def dump_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    return yaml.safe_dump({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, sort_keys=False)
