"""Flat ``section.key = value`` run configuration with a strict schema.

Every key has a default. Unknown keys, malformed values and invalid
combinations raise :class:`ConfigError` naming the offending key, so a typo
never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields, replace

from .detectsim import DetectorNoiseCfg
from .geometry import NMS_FINAL_IOU, NMS_PROPOSAL_IOU
from .reidnet import ModelConfig, TrainConfig
from .synthdata import DatasetConfig, validate_dataset_config

CONFIG_HEADER = "# mgts run config v1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OimConfig:
    tau: float = 1 / 30
    queue_size: int = 64
    eta: float = 0.5


@dataclass(frozen=True)
class EvalConfig:
    gallery_sizes: tuple[int, ...] = (10, 20, 40)
    gammas: tuple[float, ...] = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)
    score_thresh: float = 0.5
    nms_proposal: float = NMS_PROPOSAL_IOU
    nms_final: float = NMS_FINAL_IOU
    cmc_ks: tuple[int, ...] = (1, 5, 10)
    use_detector: bool = False  # False: ground-truth boxes stand in for detections

    def __post_init__(self):
        if not self.gallery_sizes or not self.cmc_ks or not self.gammas:
            raise ConfigError("gallery_sizes, gammas and cmc_ks must be non-empty")
        if min(self.gammas) < 1.0:
            raise ConfigError(f"every gamma must be >= 1, got {self.gammas}")
        for name in ("score_thresh", "nms_proposal", "nms_final"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    detector: DetectorNoiseCfg = field(default_factory=DetectorNoiseCfg)
    oim: OimConfig = field(default_factory=OimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        """Training hyper-parameters with the shuffling seed tied to the run seed."""
        return replace(self.train, seed=self.seed)

    def with_model(self, **changes) -> "RunConfig":
        return replace(self, model=replace(self.model, **changes))

    def to_text(self) -> str:
        lines = [CONFIG_HEADER]
        for key, value in _flatten(self):
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


# keys that exist on the dataclasses but are derived rather than configured
_DERIVED = {"train.seed"}


def _hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _flatten(obj, prefix: str = ""):
    hints = _hints(type(obj))
    for f in fields(obj):
        key = prefix + f.name
        value = getattr(obj, f.name)
        if key in _DERIVED:
            continue
        if dataclasses.is_dataclass(hints[f.name]):
            yield from _flatten(value, key + ".")
        else:
            yield key, value


def schema() -> dict[str, typing.Any]:
    """Every configurable key and its type."""
    out = {}

    def walk(cls, prefix):
        for name, typ in _hints(cls).items():
            key = prefix + name
            if key in _DERIVED:
                continue
            if dataclasses.is_dataclass(typ):
                walk(typ, key + ".")
            else:
                out[key] = typ

    walk(RunConfig, "")
    return out


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typing.get_origin(typ) is tuple:
            args = typing.get_args(typ)
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_parse(key, args[0], p) for p in parts)
            if len(parts) != len(args):
                raise ConfigError(f"{key}: expected {len(args)} comma-separated values, got {raw!r}")
            return tuple(_parse(key, a, p) for a, p in zip(args, parts))
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ConfigError(f"{key}: expected true or false, got {raw!r}")
            return low == "true"
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def parse_items(text: str, source: str = "<config>") -> dict[str, typing.Any]:
    types = schema()
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{n}: expected key = value, got {line!r}")
        if key not in types:
            raise ConfigError(f"{source}:{n}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate config key {key!r}")
        values[key] = _parse(key, types[key], raw)
    return values


def _build(cls, values: dict[str, typing.Any], prefix: str):
    kwargs = {}
    for name, typ in _hints(cls).items():
        key = prefix + name
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, values, key + ".")
        elif key in values:
            kwargs[name] = values[key]
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def from_items(values: dict[str, typing.Any]) -> RunConfig:
    cfg = _build(RunConfig, values, "")
    try:
        validate_dataset_config(cfg.data)
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None
    missing = set(cfg.eval.gallery_sizes) - set(cfg.data.gallery_sizes)
    if missing:
        raise ConfigError(f"eval.gallery_sizes {sorted(missing)} not in data.gallery_sizes")
    return cfg


def loads(text: str, source: str = "<config>") -> RunConfig:
    return from_items(parse_items(text, source))


def load(path: str | os.PathLike) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read(), str(path))


def override(cfg: RunConfig, **values) -> RunConfig:
    """Replace keys given as ``section__name=value`` (double underscore for dots)."""
    items = dict(_flatten(cfg))
    types = schema()
    for k, v in values.items():
        key = k.replace("__", ".")
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        items[key] = v
    return from_items(items)


__all__ = [
    "ConfigError", "EvalConfig", "OimConfig", "RunConfig",
    "load", "loads", "override", "parse_items", "schema",
]
