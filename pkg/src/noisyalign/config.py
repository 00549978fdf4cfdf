"""Run configuration: nested dataclasses, JSON round-trip, dotted-path overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .exceptions import ConfigError


@dataclass
class ModelConfig:
    d_v: int = 32
    d_t: int = 32
    proj_dim: int = 32
    depth: int = 2
    vocab_size: int = 256
    max_text_len: int = 64
    frame_width: int = 8
    frame_height: int = 4
    channels: int = 1


@dataclass
class LoraConfig:
    r: int = 16
    alpha: float = 32.0


@dataclass
class OptimConfig:
    base_lr: float = 2e-4
    head_lr_multiplier: float = 10.0
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.01
    init_tau: float = 0.07


@dataclass
class ConfidenceConfig:
    enabled: bool = True
    rescale: str = "none"
    floor: float = 1e-6
    corpus: str | None = None


@dataclass
class PipelineConfig:
    target_width: int = 832
    target_height: int = 480
    window_s: float = 5.0
    stride_s: float = 2.0
    min_shot_s: float = 5.0
    sharpness_threshold: float = 100.0
    sharpness_frames: int = 3
    shot_threshold: float = 0.5
    caption_timeout_s: float = 30.0
    caption_retries: int = 2


@dataclass
class SynthConfig:
    n_classes: int = 4
    clips_per_class: int = 50
    test_clips_per_class: int = 25
    noise: float = 40.0
    rho: float = 0.0
    pattern_len: int = 6
    gibberish_vocab: int = 8


@dataclass
class PathsConfig:
    data: str | None = None
    test_data: str | None = None
    prompts: str | None = None
    model: str | None = None
    sources: str | None = None
    confidences: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    temporal_window: int = 8
    model: ModelConfig = field(default_factory=ModelConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        data = self.to_dict()
        for dotted, value in overrides.items():
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                if not isinstance(node.get(key), dict):
                    raise ConfigError(f"unknown config key {dotted!r}")
                node = node[key]
            if leaf not in node or isinstance(node[leaf], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node[leaf] = value
        return RunConfig.from_dict(data)

    def validate(self) -> None:
        positive = {
            "temporal_window": self.temporal_window,
            "model.d_v": self.model.d_v, "model.d_t": self.model.d_t,
            "model.proj_dim": self.model.proj_dim, "model.depth": self.model.depth,
            "lora.r": self.lora.r, "lora.alpha": self.lora.alpha,
            "optim.epochs": self.optim.epochs, "optim.batch_size": self.optim.batch_size,
            "optim.head_lr_multiplier": self.optim.head_lr_multiplier,
            "pipeline.window_s": self.pipeline.window_s, "pipeline.stride_s": self.pipeline.stride_s,
            "synth.n_classes": self.synth.n_classes,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.optim.base_lr < 0 or self.optim.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")
        if self.model.d_v % 2:
            raise ConfigError("model.d_v must be even for the temporal pooler")
        if self.confidence.rescale not in ("none", "batch-mean"):
            raise ConfigError(f"confidence.rescale must be none or batch-mean, got {self.confidence.rescale!r}")
        if not 0.0 <= self.synth.rho <= 1.0:
            raise ConfigError("synth.rho must lie in [0, 1]")
        if self.synth.n_classes < 2:
            raise ConfigError("synth.n_classes must be at least 2")
        if not 0.01 <= self.optim.init_tau <= 1.0:
            raise ConfigError("optim.init_tau must lie in [0.01, 1]")


def _build(cls, data, prefix):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in fields else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    return value
