"""Flat key = value configuration files.

One scalar per line, `#` starts a comment, blank lines ignored. Every key
maps to one field of TrainConfig or DatasetSpec; unknown keys and
out-of-range values are reported with their line number. Defaults are the
dataclass defaults (alpha_f = 0.999, alpha_b = 0.99).
"""

from __future__ import annotations

from dataclasses import fields

from .datasets import DatasetSpec
from .net import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


_TRAIN_KEYS = {
    "eta": float,
    "momentum": float,
    "l2": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "normalizer": str,
    "alpha_f": float,
    "alpha_b": float,
    "hidden": int,
    "depth": int,
    "eval_interval": int,
    "divergence_limit": float,
}

_DATASET_KEYS = {
    "dataset": ("kind", str),
    "classes": ("classes", int),
    "samples": ("samples", int),
    "dim": ("dim", int),
    "image_side": ("image_side", int),
    "class_scale": ("class_scale", float),
    "dataset_noise": ("noise", float),
    "brightness": ("brightness", float),
    "images_path": ("images_path", str),
    "labels_path": ("labels_path", str),
}


def _convert(raw: str, kind, key: str, line: int):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"value {raw!r} for {key} is not a {kind.__name__}", line) from None


def parse_config(text: str) -> tuple[TrainConfig, DatasetSpec]:
    """Parse config text into (TrainConfig, DatasetSpec) with range checks."""
    cfg = TrainConfig()
    spec = DatasetSpec()
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {rawline!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _TRAIN_KEYS:
            setattr(cfg, key, _convert(value, _TRAIN_KEYS[key], key, lineno))
            try:
                cfg.validate()
            except ValueError as exc:
                raise ConfigError(str(exc), lineno) from None
        elif key in _DATASET_KEYS:
            attr, kind = _DATASET_KEYS[key]
            setattr(spec, attr, _convert(value, kind, key, lineno))
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
    try:
        cfg.validate()
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, spec


def serialize_config(cfg: TrainConfig, spec: DatasetSpec) -> str:
    """Emit config text that parse_config maps back to equal objects."""
    lines = []
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    reverse = {attr: key for key, (attr, _) in _DATASET_KEYS.items()}
    for f in fields(DatasetSpec):
        value = getattr(spec, f.name)
        if f.name in ("images_path", "labels_path") and not value:
            continue
        lines.append(f"{reverse[f.name]} = {value}")
    return "\n".join(lines) + "\n"
