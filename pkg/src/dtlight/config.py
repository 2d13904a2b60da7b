"""Declarative experiment configuration with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml


@dataclass
class TrainConfig:
    # scenario / dataset
    scenario: str = "single-3lane"
    rate_preset: int = 1
    seed: int = 0
    behavior: str = "emp"
    epsilon: float = 0.1
    episodes: int = 100
    neighbor_discount: float = 0.75

    # sub-trajectory sampling
    context_length: int = 20
    batch_size: int = 256

    # model presets
    teacher_layers: int = 6
    teacher_heads: int = 8
    teacher_d_model: int = 512
    student_layers: int = 2
    student_heads: int = 2
    student_d_model: int = 256
    adapter_n_div: int = 4
    adapter_rank: int = 1
    adapter_bottleneck: int = 32
    dropout: float = 0.1
    rtg_scale: float = 1000.0

    # optimization
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_steps: int = 100
    grad_clip: float = 0.25
    teacher_updates: int = 2000
    student_updates: int = 3000

    # loss
    lambda_init: float = 0.1
    entropy_target_factor: float = 0.25  # target entropy = factor * ln(num_actions)
    kd_temperature: float = 8.0
    kd_alpha: float = 0.4
    kd_beta: float = 1.0

    # online fine-tuning / evaluation
    gamma_eval: float = 0.2
    gamma_online: float = 0.3
    buffer_capacity: int = 20
    finetune_episodes: int = 10
    finetune_updates_per_episode: int = 300
    eval_seeds: int = 5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a mapping")
        return cls.from_dict(doc)

    def with_overrides(self, pairs: list[str]) -> "TrainConfig":
        """Apply `key=value` overrides, coercing values to the field types."""
        d = self.to_dict()
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for pair in pairs:
            if "=" not in pair:
                raise ValueError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            if key not in d:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, bool):
                d[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                d[key] = int(raw)
            elif isinstance(current, float):
                d[key] = float(raw)
            else:
                d[key] = raw
        return TrainConfig.from_dict(d)
