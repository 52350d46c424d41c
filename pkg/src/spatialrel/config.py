"""Toolchain config file (YAML or JSON). Angles are given in degrees."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .geometry import FRONT_AXES
from .relations import MarginConfig

SECTIONS = ("margins", "generation", "objects", "scoring")
GENERATION_KEYS = ("seed", "tolerance", "default_target", "targets", "turns", "source_tag")


@dataclass(frozen=True)
class ToolConfig:
    margins: MarginConfig = MarginConfig()
    generation: Mapping[str, Any] = field(default_factory=dict)
    front_axes: Mapping[str, str] = field(default_factory=dict)
    rel_tol: float = 0.10
    angle_tol_deg: float = 15.0


def parse_config(data: Mapping | None) -> ToolConfig:
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    margins = MarginConfig.from_config(data.get("margins") or {})

    gen = dict(data.get("generation") or {})
    bad = set(gen) - set(GENERATION_KEYS)
    if bad:
        raise ConfigError(f"unknown generation keys: {sorted(bad)}")

    objects = data.get("objects") or {}
    if set(objects) - {"front_axes"}:
        raise ConfigError(f"unknown objects keys: {sorted(set(objects) - {'front_axes'})}")
    front_axes = dict(objects.get("front_axes") or {})
    for cat, axis in front_axes.items():
        if axis not in FRONT_AXES:
            raise ConfigError(f"objects.front_axes.{cat}: axis must be one of {sorted(FRONT_AXES)}, got {axis!r}")

    scoring = data.get("scoring") or {}
    if set(scoring) - {"rel_tol", "angle_tol_deg"}:
        raise ConfigError(f"unknown scoring keys: {sorted(set(scoring) - {'rel_tol', 'angle_tol_deg'})}")
    try:
        rel_tol = float(scoring.get("rel_tol", 0.10))
        angle_tol = float(scoring.get("angle_tol_deg", 15.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scoring: {exc}") from None
    return ToolConfig(margins, gen, front_axes, rel_tol, angle_tol)


def load_config(path: str | None) -> ToolConfig:
    if path is None:
        return ToolConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    return parse_config(data)
