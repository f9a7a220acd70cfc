"""Experiment configuration: one YAML document of flat key-value pairs
with precedence flag > file > default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import yaml

from .data import SynthConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .train import TrainConfig


@dataclass
class ExperimentConfig:
    # training hyperparameters
    gamma: float = 0.1
    beta: float = 2.0
    max_seq_length: int = 128
    per_device_train_batch_size: int = 16
    per_device_eval_batch_size: int = 64
    warmup_ratio: float = 0.1
    learning_rate: float | None = None
    weight_decay: float = 0.1
    adam_epsilon: float = 1e-7
    hidden_layer_dropout: float = 0.1
    soft_attention_layer_size: int = 100
    soft_attention_hidden_size: int = 300
    initializer: str = "glorot"
    epochs: int = 20
    seed: int = 0
    profile: str = "micro-scratch"
    clip_norm: float = 1.0
    # model
    model_kind: str = "softattn"  # or "cls"
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    # data
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    dev_fraction: float = 0.1
    split_mode: str = "subword"
    subword_piece_len: int = 4
    # scoring
    method: str = "weighted-soft"
    aggregation: str = "max"
    lime_samples: int = 5000
    lime_kernel_width: float = 0.25
    lime_ridge: float = 1.0

    def validate(self) -> None:
        if self.initializer != "glorot":
            raise ConfigError(f"only the glorot initializer is supported, got {self.initializer!r}")
        if self.model_kind not in ("softattn", "cls"):
            raise ConfigError(f"model_kind must be softattn or cls, got {self.model_kind!r}")
        if self.split_mode not in ("word", "subword"):
            raise ConfigError(f"split_mode must be word or subword, got {self.split_mode!r}")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            max_seq_len=self.max_seq_length,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            model_dim=self.model_dim,
            ffn_dim=self.ffn_dim,
            dropout_prob=self.hidden_layer_dropout,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.per_device_train_batch_size,
            learning_rate=self.learning_rate,
            warmup_ratio=self.warmup_ratio,
            weight_decay=self.weight_decay,
            adam_epsilon=self.adam_epsilon,
            gamma=self.gamma,
            beta=self.beta,
            seed=self.seed,
            eval_batch_size=self.per_device_eval_batch_size,
            profile=self.profile,
            clip_norm=self.clip_norm,
            attn_layer_size=self.soft_attention_layer_size,
            attn_hidden_size=self.soft_attention_hidden_size,
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from defaults, then the file, then overrides."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    unknown = set(values) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    config = ExperimentConfig(**values)
    config.validate()
    return config


def synth_config_from_file(path) -> SynthConfig:
    """Synthetic-corpus settings live in their own small YAML document."""
    with open(path, encoding="utf-8") as f:
        loaded = yaml.safe_load(f) or {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    valid = {f.name for f in fields(SynthConfig)}
    unknown = set(loaded) - valid
    if unknown:
        raise ConfigError(f"unknown synthetic-corpus keys: {sorted(unknown)}")
    config = SynthConfig(**loaded)
    config.validate()
    return config
