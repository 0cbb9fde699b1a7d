"""Configuration records and their ``key = value`` text form.

Nested records flatten to dotted keys (``loss.gamma = 2.0``); tuples are
written comma-separated.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

CLASS_NAMES = ("sky", "cloud", "sun", "tracker")
ATTENTION_VARIANTS = ("none", "mean", "spatial_conv", "spatial_convlstm")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    frame_size: int = 64
    classes: int = 4
    repr_size: int = 8
    look_back: int = 6
    convlstm_filters: tuple[int, ...] = (128, 64, 64)
    convlstm_kernel: int = 5
    attention_variant: str = "spatial_conv"
    attention_channels: str = "cloud"
    attention_filters: int = 64
    attention_kernel: int = 5
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    dilation: int = 2
    cloud_index: int = 1
    measure_filters: int = 128
    measure_dropout: float = 0.5
    train_encoder: bool = False
    ar_context: int = 2
    ar_filters: int = 32

    def __post_init__(self):
        if self.frame_size % self.repr_size:
            raise ConfigError("frame_size must be a multiple of repr_size")
        factor = self.frame_size // self.repr_size
        if factor < 1 or factor & (factor - 1):
            raise ConfigError("downsample factor must be a power of two")
        if len(self.encoder_channels) != int(math.log2(factor)) + 1:
            raise ConfigError(
                f"encoder_channels needs {int(math.log2(factor)) + 1} entries for factor {factor} "
                "(one per stride-2 block plus the dilated block)")
        if self.look_back < 1:
            raise ConfigError("look_back must be >= 1")
        if self.classes < 2 or not 0 <= self.cloud_index < self.classes:
            raise ConfigError("need classes >= 2 and a valid cloud_index")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(f"attention_variant must be one of {ATTENTION_VARIANTS}")
        if self.attention_channels not in ("cloud", "all"):
            raise ConfigError("attention_channels must be 'cloud' or 'all'")
        if not self.convlstm_filters:
            raise ConfigError("need at least one ConvLSTM tier")
        if self.ar_context < 1:
            raise ConfigError("ar_context must be >= 1")

    @property
    def factor(self) -> int:
        return self.frame_size // self.repr_size


@dataclass
class LossConfig:
    lam: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.5
    m: float = 100.0
    irradiance_scale: float = 1000.0
    focal_form: str = "canonical"

    def __post_init__(self):
        if self.gamma < 0 or not 0 < self.alpha <= 1 or self.m <= 0 or self.lam < 0:
            raise ConfigError("need gamma >= 0, 0 < alpha <= 1, m > 0, lam >= 0")
        if self.focal_form not in ("canonical", "as_printed"):
            raise ConfigError("focal_form must be 'canonical' or 'as_printed'")


@dataclass
class TrainConfig:
    batch_size: int = 4
    base_lr: float = 0.002
    lr_decay: float = 0.9
    weight_decay: float = 5e-5
    epochs: int = 10
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 1 or not 0 < self.lr_decay <= 1 or self.weight_decay < 0:
            raise ConfigError("need batch_size >= 1, 0 < lr_decay <= 1, weight_decay >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class SynthConfig:
    frame_size: int = 64
    steps: int = 12
    velocity: tuple[float, float] = (3.0, 0.0)
    direction: str = "fixed"
    growth: float = 0.0
    blobs_min: int = 2
    blobs_max: int = 8
    radius: float = 6.0
    radius_jitter: float = 0.0
    sun_radius: float = 6.0
    sun_arc_radius: float = 18.0
    sun_arc_start: float = 200.0
    sun_arc_span: float = 140.0
    tracker_width: float = 3.0
    clearsky_peak: float = 1.0
    cover_coeff: float = 0.8
    irradiance_noise: float = 0.02
    pixel_noise: float = 0.03
    start_minute: int = 600
    open_boundary: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.radius + self.radius_jitter >= self.frame_size:
            raise ConfigError("blob radius must be smaller than the frame")
        if self.steps < 1 or self.blobs_min < 0 or self.blobs_max < self.blobs_min:
            raise ConfigError("invalid step or blob counts")
        if not 0 < self.cover_coeff <= 1:
            raise ConfigError("cover_coeff must lie in (0, 1]")
        if self.direction not in ("fixed", "axis4"):
            raise ConfigError("direction must be 'fixed' or 'axis4'")


# ---------------------------------------------------------------------------
# key = value text
# ---------------------------------------------------------------------------

def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def flatten(cfg, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = value
    return out


def to_text(cfg) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in flatten(cfg).items())


def parse_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def _coerce(raw: str, hint) -> Any:
    origin = typing.get_origin(hint)
    if origin is tuple:
        args = typing.get_args(hint)
        inner = args[0]
        items = [s.strip() for s in raw.replace("(", "").replace(")", "").split(",") if s.strip()]
        return tuple(_coerce(s, inner) for s in items)
    if hint is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    return raw


def build(cls, values: Mapping[str, Any] | None = None, strict: bool = True):
    """Instantiate ``cls`` from flat dotted keys (strings are coerced)."""
    values = dict(values or {})
    hints = typing.get_type_hints(cls)
    kwargs: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            prefix = f"{f.name}."
            sub = {k[len(prefix):]: values.pop(k) for k in list(values) if k.startswith(prefix)}
            kwargs[f.name] = build(hint, sub, strict)
        elif f.name in values:
            raw = values.pop(f.name)
            try:
                kwargs[f.name] = _coerce(raw, hint) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"{f.name}: {exc}") from exc
    if strict and values:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(values)}")
    return cls(**kwargs)


def from_text(cls, text: str, strict: bool = True):
    return build(cls, parse_text(text), strict)


def save(cfg, path: str | Path) -> None:
    Path(path).write_text(to_text(cfg), encoding="utf-8")


def load(cls, path: str | Path):
    return from_text(cls, Path(path).read_text(encoding="utf-8"))
