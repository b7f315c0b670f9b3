"""Episodic environment protocol shared by built-in and bridged environments."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..controller import ActionSpec
from ..errors import ConfigurationError

MOD_KINDS = (
    "color_perturb",
    "vertical_bars",
    "background_blob",
    "higher_walls",
    "floor_texture",
    "hover_text",
)


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment instance."""

    name: str
    obs_size: int
    action: ActionSpec
    max_steps: int
    solve_threshold: float
    min_score: float


@dataclass(frozen=True)
class EnvStep:
    frame: np.ndarray
    reward: float
    done: bool


@dataclass(frozen=True)
class EnvModification:
    """A rendering-only change; dynamics and rewards are never touched.

    ``params`` overrides the modification's documented defaults.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MOD_KINDS:
            raise ConfigurationError(
                f"unknown modification {self.kind!r}; known: {', '.join(MOD_KINDS)}"
            )

    def get(self, key: str, default):
        return self.params.get(key, default)


class Env(ABC):
    """One episodic environment instance, owned by a single worker."""

    spec: EnvSpec

    @abstractmethod
    def reset(self, seed: int) -> np.ndarray:
        """Start a new episode; returns the initial (L, L, 3) frame in [0, 1]."""

    @abstractmethod
    def step(self, action) -> EnvStep:
        """Advance one tick. Raises EnvProtocolError if the episode is done."""

    @abstractmethod
    def with_modification(self, mod: EnvModification) -> "Env":
        """A fresh instance of this environment rendering with ``mod``."""

    def close(self) -> None:  # only remote sessions need teardown
        pass


def apply_modification(env: Env, mod: EnvModification) -> Env:
    """Validate compatibility and return a modified copy of ``env``."""
    return env.with_modification(mod)
