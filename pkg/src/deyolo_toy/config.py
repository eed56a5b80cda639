"""Flat experiment configuration.

A config file is a JSON object whose keys are drawn from ``DEFAULTS``
(dotted names such as ``deca.cmwe_layers``). Missing keys take their
default; unknown keys and wrongly typed values are rejected.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

from .deca import DecaConfig
from .depa import DepaConfig
from .model import ModelConfig
from .synth import SceneConfig
from .train import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "image_size": 128,
    "width": 16,
    "epochs": 60,
    "batch": 8,
    "lr_init": 1e-2,
    "lr_final": 1e-4,
    "modality": "cross",
    "deca.enabled": True,
    "deca.cmwe_layers": 3,
    "deca.cmwe_kind": "depthwise",
    "deca.se_reduction": 16,
    "depa.enabled": True,
    "depa.k1": 3,
    "depa.k2": 3,
    "focus.enabled": True,
    "dataset.root": "data/synth",
    "out.dir": "runs/default",
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(value, str):
        return value
    raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")


def make_config(overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    validate(cfg)
    return cfg


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    raw.update(overrides or {})
    return make_config(raw)


def parse_assignments(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def validate(cfg: Mapping[str, Any]) -> None:
    try:
        model_config(cfg)
        train_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["width"] % 2:
        raise ConfigError("width must be even")
    for c in (cfg["width"], 2 * cfg["width"], 4 * cfg["width"]):
        if cfg["deca.enabled"] and c % cfg["deca.se_reduction"]:
            raise ConfigError(
                f"deca.se_reduction={cfg['deca.se_reduction']} does not divide channel width {c}")


def model_config(cfg: Mapping[str, Any], num_classes: int = 3) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes,
        width=cfg["width"],
        image_size=cfg["image_size"],
        use_deca=cfg["deca.enabled"],
        use_depa=cfg["depa.enabled"],
        use_focus=cfg["focus.enabled"],
        modality=cfg["modality"],
        deca=DecaConfig(cfg["deca.cmwe_layers"], cfg["deca.cmwe_kind"], cfg["deca.se_reduction"]),
        depa=DepaConfig(cfg["depa.k1"], cfg["depa.k2"]),
    )


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"], batch=cfg["batch"], lr_init=cfg["lr_init"],
                       lr_final=cfg["lr_final"], seed=cfg["seed"])


def scene_config(cfg: Mapping[str, Any]) -> SceneConfig:
    return SceneConfig(image_size=cfg["image_size"], seed=cfg["seed"])


def dump(cfg: Mapping[str, Any], path) -> None:
    Path(path).write_text(json.dumps(dict(cfg), indent=2, sort_keys=True) + "\n")
