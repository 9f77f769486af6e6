"""Experiment configuration loaded from YAML; unknown keys are rejected."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .data import ToyLanguageSpec
from .decode import BeamConfig
from .errors import ConfigError
from .training import TrainConfig

SEED_ENV = "CASCADE_SEED"

# architecture knobs a config file may set; kinds and vocabulary sizes come from the data
MODEL_KEYS = {"embed_dim", "conv_layers", "conv_kernel", "conv_filters", "encoder_layers", "encoder_hidden",
              "encoder_proj", "pred_layers", "pred_hidden", "pred_proj", "joint_dim", "layer_norm", "dtype"}
LM_KEYS = {"embed_dim", "layers", "hidden", "proj", "layer_norm", "dtype"}


def _acoustic_defaults() -> dict:
    # the wider joint lets the character baseline learn its homophone choices within 2000 steps
    return {"conv_layers": [{"filters": 64, "kernel_size": 3, "stride": 2, "dilation": 1},
                            {"filters": 64, "kernel_size": 3, "stride": 1, "dilation": 2}],
            "joint_dim": 128}


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_paired: int = 2000
    n_text_only: int = 20000
    n_dev: int = 200
    n_test: int = 300
    language: ToyLanguageSpec = field(default_factory=ToyLanguageSpec)
    acoustic: dict = field(default_factory=_acoustic_defaults)
    baseline: dict = field(default_factory=_acoustic_defaults)
    s2c: dict = field(default_factory=dict)
    s2c_conv_kernel: int = 3
    lm: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3))
    s2c_steps: int = 4000
    lm_steps: int = 2000
    beam: BeamConfig = field(default_factory=lambda: BeamConfig(beam_size=5, lambda_=0.35))
    out_dir: Optional[str] = None
    data_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("n_paired", "n_text_only", "n_dev", "n_test"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("s2c_steps", "lm_steps"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.s2c_conv_kernel < 2:
            raise ConfigError("s2c_conv_kernel must be at least 2")
        for section, keys in (("acoustic", MODEL_KEYS), ("baseline", MODEL_KEYS), ("s2c", MODEL_KEYS),
                              ("lm", LM_KEYS)):
            bad = set(getattr(self, section)) - keys
            if bad:
                raise ConfigError(f"unknown key(s) in {section}: {sorted(bad)}")
        if self.data_dir is not None and not os.path.isdir(self.data_dir):
            raise ConfigError(f"data_dir {self.data_dir!r} does not exist")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["beam"]["lambda"] = d["beam"].pop("lambda_")
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {"language": ToyLanguageSpec, "train": TrainConfig, "beam": BeamConfig}


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    raw = dict(raw)
    if cls is BeamConfig and "lambda" in raw:
        raw["lambda_"] = raw.pop("lambda")
    names = {f.name for f in dataclasses.fields(cls)}
    bad = set(raw) - names
    if bad:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(bad)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: Optional[dict]) -> ExperimentConfig:
    raw = dict(raw or {})
    kwargs = {}
    defaults = ExperimentConfig.__dataclass_fields__
    for key, value in raw.items():
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in _SECTIONS:
            if key == "train":
                value = {"learning_rate": 1e-3, **(value or {})}
            if key == "beam":
                value = {"beam_size": 5, "lambda": 0.35, **(value or {})}
            kwargs[key] = _build(_SECTIONS[key], value or {}, key)
        elif key in ("acoustic", "baseline", "s2c", "lm"):
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a mapping")
            kwargs[key] = {**(_acoustic_defaults() if key in ("acoustic", "baseline") else {}), **value}
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Read YAML (or use defaults); ``seed`` or the CASCADE_SEED variable override the file."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    env = os.environ.get(SEED_ENV)
    if seed is None and env not in (None, ""):
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed is not None:
        raw["seed"] = seed
    return config_from_dict(raw)


__all__ = ["ExperimentConfig", "load_config", "config_from_dict", "SEED_ENV", "MODEL_KEYS", "LM_KEYS"]
