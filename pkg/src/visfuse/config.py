"""Flat ``key = value`` experiment configuration.

File format: one ``key = value`` per line, ``#`` starts a comment, lists
are comma separated, booleans are ``true``/``false``.  Unknown keys are an
error.  Any key can be overridden through an environment variable named
``VISFUSE_CFG_<KEY>`` (upper case).
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, DataIOError

ENV_PREFIX = "VISFUSE_CFG_"
ABLATIONS = ("full", "no_kb", "no_visual", "no_text", "vis_only")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class ExperimentConfig:
    """All experiment settings.  The defaults are the reference configuration
    (also shipped as ``configs/reference.txt``)."""

    # data
    grid_size: int = 64
    kinds: tuple = ("blobs", "spiral", "ring", "edge_disk")
    n_train: int = 200
    n_val: int = 20
    n_test: int = 40
    noise_sigma: float = 0.05
    array: str = "eht8"
    n_hour_angles: int = 10
    span_hours: float = 12.0
    declination_deg: float = 12.39
    uv_fill: float = 0.9
    data_seed: int = 7
    dataset_name: str = "synthetic-galaxies"
    dataset_subject: str = "radio sky images of galaxies"
    # model
    d_model: int = 64
    n_query: int = 16
    n_heads: int = 4
    vqg_layers: int = 2
    ff_mult: int = 2
    vis_freqs: int = 8
    use_position_codes: bool = True
    channels: int = 4
    patch: int = 8
    conv1d_kernel: int = 3
    conv2d_kernel: int = 3
    text_tokens: int = 32
    encoder_seed: int = 1234
    field_depth: int = 5
    field_width: int = 64
    field_freqs: int = 16
    amp_scale: float = 64.0
    ablation: str = "full"
    # optimisation
    epochs: int = 30
    lr: float = 1e-3
    lr_schedule: str = "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_fraction: float = 1.0
    # CLEAN baseline
    clean_gain: float = 0.1
    clean_max_iter: int = 500
    clean_threshold: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("grid_size", "n_train", "n_test", "d_model", "n_query", "n_heads",
                     "vqg_layers", "ff_mult", "channels", "patch", "text_tokens",
                     "field_width", "field_freqs", "epochs", "n_hour_angles", "vis_freqs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", field=name)
        if self.n_val < 0:
            raise ConfigError("n_val must be >= 0", field="n_val")
        if self.grid_size < 16 or self.grid_size & (self.grid_size - 1):
            raise ConfigError("grid_size must be a power of two >= 16", field="grid_size")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]", field="train_fraction")
        if self.field_depth < 2:
            raise ConfigError("field_depth must be >= 2", field="field_depth")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads", field="n_heads")
        if self.d_model % (self.field_depth - 1):
            raise ConfigError("d_model must split evenly across the field's hidden layers",
                              field="field_depth")
        if self.grid_size % self.patch:
            raise ConfigError("grid_size must be divisible by patch", field="patch")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}", field="lr_schedule")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}", field="ablation")
        if self.array != "eht8":
            raise ConfigError("only the 'eht8' array geometry is available", field="array")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0", field="noise_sigma")
        if not 0 < self.clean_gain <= 1:
            raise ConfigError("clean_gain must lie in (0, 1]", field="clean_gain")
        if not self.kinds:
            raise ConfigError("kinds must not be empty", field="kinds")
        from .skysim import SKY_KINDS
        for k in self.kinds:
            if k not in SKY_KINDS:
                raise ConfigError(f"unknown sky kind {k!r}", field="kinds")
        if self.amp_scale <= 0:
            raise ConfigError("amp_scale must be positive", field="amp_scale")

    @property
    def n_train_used(self) -> int:
        return max(1, math.ceil(self.train_fraction * self.n_train - 1e-9))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # serialisation -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def model_hash(self) -> str:
        """Hash of the fields a checkpoint's tensors depend on."""
        keys = ("grid_size", "d_model", "n_query", "n_heads", "vqg_layers", "ff_mult",
                "vis_freqs", "channels", "patch", "conv1d_kernel", "conv2d_kernel",
                "text_tokens", "encoder_seed", "field_depth", "field_width", "field_freqs",
                "ablation")
        text = "\n".join(f"{k}={_format(getattr(self, k))}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str, env: dict | None = None) -> "ExperimentConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'", field=None)
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key] = val
        env = os.environ if env is None else env
        for k, v in env.items():
            if k.startswith(ENV_PREFIX):
                raw[k[len(ENV_PREFIX):].lower()] = v
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}", field=key)
            kwargs[key] = _parse(key, val, cls.__dataclass_fields__[key].default)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, env: dict | None = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, env)

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.to_text())
        except OSError as exc:
            raise DataIOError(f"cannot write config {path}: {exc}") from exc


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, text, default):
    if not isinstance(text, str):
        return text
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}", field=key) from None
