"""Run configuration: nested dataclasses loaded from YAML over built-in defaults.

Defaults carry the published hyperparameters (hidden size 128, 8 encoder
layers, 2-layer decoders, 75% masking, K = 12, batch 128, AdamW with
lr 1e-4, betas (0.9, 0.99), weight decay 3e-4). Epoch counts are desk-scale.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .objectives import TERMS

log = logging.getLogger(__name__)

# Named loss/component variants for ablation runs.
VARIANTS = {
    "full": dict(terms=TERMS),
    "t_re": dict(terms=("t_re",), use_cbd=False),
    "f_re": dict(terms=("f_re",)),
    "t_re+f_dual": dict(terms=("t_re", "f_dual"), use_cbd=False),
    "f_re+t_dual": dict(terms=("f_re", "t_dual")),
    "t_re+f_re": dict(terms=("t_re", "f_re")),
    "no_ser": dict(terms=TERMS, use_ser=False),
    "no_cim": dict(terms=TERMS, use_cim=False),
}


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    frequencies: list = field(default_factory=lambda: [[3], [10], [24]])
    amplitude: float = 1.0
    noise: float = 0.1
    n: int = 600
    length: int = 128
    channels: int = 2


@dataclass
class DataConfig:
    format: str = "synthetic"  # synthetic | ts | tsv
    train: str | None = None
    test: str | None = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    test_fraction: float = 0.3
    normalize: bool = True


@dataclass
class ModelSection:
    d: int = 128
    encoder_layers: int = 8
    decoder_layers: int = 2
    cbd_layers: int = 2
    heads: int = 4
    window: int = 8
    ffn_mult: int = 4
    activation: str = "relu"
    use_cbd: bool = True
    use_cim: bool = True
    use_ser: bool = True


@dataclass
class MaskingConfig:
    ratio: float = 0.75


@dataclass
class SerConfig:
    K: int = 12
    per_channel: bool = False


@dataclass
class LossConfig:
    gamma: float = 0.5
    variant: str = "full"


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 3e-4


@dataclass
class TrainingConfig:
    batch_size: int = 128
    epochs: int = 20
    probe_epochs: int = 100
    probe_lr: float = 1e-3
    finetune_epochs: int = 20
    finetune_lr: float = 1e-4
    precision: str = "f32"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    ser: SerConfig = field(default_factory=SerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    out: str = "runs/default"

    def validate(self) -> None:
        errs = []
        if self.data.format not in ("synthetic", "ts", "tsv"):
            errs.append(f"data.format must be synthetic, ts or tsv (got {self.data.format!r})")
        if self.data.format != "synthetic" and not self.data.train:
            errs.append("data.train is required for file-based datasets")
        if not 0.0 < self.data.test_fraction < 1.0:
            errs.append("data.test_fraction must be in (0, 1)")
        if not 0.0 <= self.masking.ratio < 1.0:
            errs.append("masking.ratio must be in [0, 1) so some tokens stay visible")
        if self.ser.K < 1 or self.ser.K > 32:
            errs.append("ser.K must be in [1, 32]")
        if self.loss.gamma < 0:
            errs.append("loss.gamma must be >= 0")
        if self.loss.variant not in VARIANTS:
            errs.append(f"loss.variant must be one of {sorted(VARIANTS)}")
        if self.model.d % self.model.heads:
            errs.append("model.d must be divisible by model.heads")
        if self.model.activation not in ("relu", "tanh"):
            errs.append("model.activation must be relu or tanh")
        if self.training.precision not in ("f32", "f64"):
            errs.append("training.precision must be f32 or f64")
        for name in ("batch_size", "epochs"):
            if getattr(self.training, name) < 1:
                errs.append(f"training.{name} must be >= 1")
        if self.optimizer.lr <= 0:
            errs.append("optimizer.lr must be > 0")
        if errs:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errs))

    def variant(self) -> dict:
        return VARIANTS[self.loss.variant]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _merge(obj, updates: dict, prefix: str, overrides: list) -> None:
    known = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{key} must be a mapping")
            _merge(current, value, f"{prefix}{key}.", overrides)
            continue
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if value != current:
            overrides.append((f"{prefix}{key}", current, value))
        setattr(obj, key, value)


def load_config(path: str | Path | None = None, **cli) -> tuple[RunConfig, list]:
    """Defaults <- YAML file <- non-None CLI values. Returns the config and the override log."""
    cfg = RunConfig()
    overrides: list = []
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, raw, "", overrides)
    flat = {k: v for k, v in cli.items() if v is not None}
    if "precision" in flat:
        _merge(cfg.training, {"precision": flat.pop("precision")}, "training.", overrides)
    _merge(cfg, flat, "", overrides)
    for key, old, new in overrides:
        log.info("config override %s: %r -> %r", key, old, new)
    cfg.validate()
    return cfg, overrides
