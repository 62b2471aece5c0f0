"""Run configuration and flat dotted-key config files.

A config file is a flat JSON object such as ``{"loss.lambda": 0.8,
"model.d_model": 64, "train.epochs": 5}``.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

ABLATION_MODES = ("baseline", "pen", "pen_pwce")


@dataclass
class ModelConfig:
    d_model: int = 256
    heads: int = 8
    window: int = 5
    ffn_mult: int = 2
    d_p: int = 0  # prototype feature dim; 0 -> d_v
    select_mode: str = "mixture"
    literal_form: bool = False  # softmax(relu(fc)) prototype classifier
    pe_base: float = 1000.0
    ln_eps: float = 1e-5

    def validate(self):
        if self.d_model < 1 or self.heads < 1 or self.window < 1 or self.ffn_mult < 1:
            raise ConfigError("model dims, heads and window must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"model.d_model={self.d_model} is not divisible by model.heads={self.heads}")
        if self.select_mode not in ("mixture", "teacher_forced"):
            raise ConfigError(f"unknown prototype selection mode {self.select_mode!r}")
        if self.pe_base <= 0:
            raise ConfigError("model.pe_base must be positive")


@dataclass
class LossConfig:
    beta_cb: float = 0.999
    gamma: float = 2.0
    lam: float = 0.8
    literal_form: bool = False
    propensity_c: float | None = None
    rare_threshold: int = 25

    def validate(self):
        if not 0.0 <= self.beta_cb < 1.0:
            raise ConfigError("loss.beta_cb must lie in [0, 1)")
        if self.gamma < 0 or self.lam < 0:
            raise ConfigError("loss.gamma and loss.lambda must be >= 0")
        if self.rare_threshold < 1:
            raise ConfigError("loss.rare_threshold must be >= 1")

    @property
    def focusing(self):
        """Exponent of the focal term; the literal form reuses beta."""
        return self.beta_cb if self.literal_form else self.gamma


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    steps: int = 0  # >0 overrides epochs with a fixed number of optimiser steps
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.0
    clip_norm: float = 5.0
    ablation_mode: str = "pen_pwce"
    eval_every: int = 1  # validation mAP every N epochs; 0 disables
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {self.ablation_mode!r}; choose from {ABLATION_MODES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0 or self.steps < 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        self.model.validate()
        self.loss.validate()


# dotted key -> (section, attribute)
_ALIASES = {"loss.lambda": ("loss", "lam"), "train.lr": ("train", "learning_rate")}


def _keymap():
    keys = {}
    for f in fields(TrainConfig):
        if f.name in ("model", "loss"):
            continue
        keys[f"train.{f.name}"] = ("train", f.name)
    for f in fields(ModelConfig):
        keys[f"model.{f.name}"] = ("model", f.name)
    for f in fields(LossConfig):
        if f.name != "lam":
            keys[f"loss.{f.name}"] = ("loss", f.name)
    keys.update(_ALIASES)
    return keys


KEYS = _keymap()


def _coerce(current, value, key):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return value


def apply_overrides(cfg, flat):
    """Return a copy of ``cfg`` with dotted-key overrides applied."""
    cfg = replace(cfg, model=replace(cfg.model), loss=replace(cfg.loss))
    for key, value in flat.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, attr = KEYS[key]
        target = cfg if section == "train" else getattr(cfg, section)
        current = getattr(target, attr)
        if attr == "propensity_c":
            value = None if value is None else _coerce(0.0, value, key)
        else:
            value = _coerce(current, value, key)
        setattr(target, attr, value)
    cfg.validate()
    return cfg


def to_flat(cfg):
    out = {}
    for key, (section, attr) in sorted(KEYS.items()):
        if key == "train.lr":
            continue
        target = cfg if section == "train" else getattr(cfg, section)
        out[key] = getattr(target, attr)
    return out


def from_flat(flat):
    return apply_overrides(TrainConfig(), flat)


def load_config_file(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a flat JSON object")
    return data


def to_dict(cfg):
    return asdict(cfg)
