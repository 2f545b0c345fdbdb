"""``key = value`` configuration files for the network and its training run.

Lines starting with ``#`` (and text after ``#``) are comments.  Absent keys
take their defaults; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .group import GroupSpec
from .segnet import DOWNSAMPLE_MODES, SegNetConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    lr: float = 0.01
    decay_epoch: int = 60
    decay_factor: float = 0.1
    momentum: float = 0.9
    batch_size: int = 8
    seed: int = 0
    augment: bool = False
    averaging: str = "per_image"
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr < 0 or self.momentum < 0 or self.decay_factor < 0:
            raise ConfigError("lr, momentum and decay_factor must be non-negative")
        if self.averaging not in ("per_image", "pooled"):
            raise ConfigError(f"averaging must be per_image or pooled, got {self.averaging!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


def _weights(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("ds_weights needs three comma-separated values")
    return tuple(parts)


NET_KEYS = {
    "group": GroupSpec.parse,
    "base_width": int,
    "num_stages": int,
    "blocks_per_stage": int,
    "downsample": _choice(DOWNSAMPLE_MODES),
    "ds_weights": _weights,
    "equivariant": _bool,
    "kernel_size": int,
    "fuse_heads": _bool,
}

TRAIN_KEYS = {
    "epochs": int,
    "lr": float,
    "decay_epoch": int,
    "decay_factor": float,
    "momentum": float,
    "batch_size": int,
    "seed": int,
    "augment": _bool,
    "averaging": _choice(("per_image", "pooled")),
    "dtype": _choice(("float64", "float32")),
}


def parse_config_text(text: str) -> tuple[SegNetConfig, TrainConfig]:
    net, train = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in NET_KEYS:
            target, parser = net, NET_KEYS[key]
        elif key in TRAIN_KEYS:
            target, parser = train, TRAIN_KEYS[key]
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            target[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return SegNetConfig(**net), TrainConfig(**train)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path) -> tuple[SegNetConfig, TrainConfig]:
    """Read a config file; the name ``default`` yields the built-in defaults."""
    if str(path) == "default":
        return SegNetConfig(), TrainConfig()
    return parse_config_text(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, GroupSpec):
        return value.name.lower()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(net: SegNetConfig, train: TrainConfig | None = None) -> str:
    lines = [f"{f.name} = {_fmt(getattr(net, f.name))}" for f in dataclasses.fields(net)]
    if train is not None:
        lines += [f"{f.name} = {_fmt(getattr(train, f.name))}" for f in dataclasses.fields(train)]
    return "\n".join(lines) + "\n"
