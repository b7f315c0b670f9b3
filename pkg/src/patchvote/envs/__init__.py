"""Built-in pixel environments and their rendering-only modifications."""

from __future__ import annotations

from ..errors import ConfigurationError
from .base import Env, EnvModification, EnvSpec, EnvStep, apply_modification
from .baseline import BaselineResult, random_baseline
from .dodge import Dodge
from .lane_racer import LaneRacer

ENV_NAMES = ("lane_racer", "dodge")

_DEFAULTS = {
    "lane_racer": {"cls": LaneRacer, "size": 96, "max_steps": 1000},
    "dodge": {"cls": Dodge, "size": 96, "max_steps": 2100},
}


def make_env(
    name: str,
    size: int | None = None,
    max_steps: int | None = None,
    modification: EnvModification | None = None,
) -> Env:
    """Construct a built-in environment by name with optional overrides."""
    if name not in _DEFAULTS:
        raise ConfigurationError(f"unknown env {name!r}; known: {', '.join(ENV_NAMES)}")
    d = _DEFAULTS[name]
    return d["cls"](
        size=d["size"] if size is None else size,
        max_steps=d["max_steps"] if max_steps is None else max_steps,
        modification=modification,
    )


def compatible_modifications(name: str) -> tuple[str, ...]:
    if name not in _DEFAULTS:
        raise ConfigurationError(f"unknown env {name!r}")
    return tuple(sorted(_DEFAULTS[name]["cls"].MODS))


__all__ = [
    "Env",
    "EnvSpec",
    "EnvStep",
    "EnvModification",
    "apply_modification",
    "make_env",
    "compatible_modifications",
    "random_baseline",
    "BaselineResult",
    "Dodge",
    "LaneRacer",
    "ENV_NAMES",
]
