"""Uniform-random policy evaluation, used as the floor in acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..controller import CONTINUOUS
from ..errors import ConfigurationError
from ..seeding import derive_seed
from .base import Env


@dataclass(frozen=True)
class BaselineResult:
    mean: float
    std: float
    scores: tuple[float, ...]


def random_action(spec, rng: np.random.Generator):
    if spec.kind == CONTINUOUS:
        lo = np.array([b[0] for b in spec.bounds])
        hi = np.array([b[1] for b in spec.bounds])
        return rng.uniform(lo, hi)
    return int(rng.integers(spec.dim))


def random_baseline(env: Env, episodes: int, seed: int = 0,
                    max_steps: int | None = None) -> BaselineResult:
    """Mean and standard deviation of a uniform-random policy.

    Episode seeds and action streams derive from ``seed`` alone, so repeated
    calls are reproducible.
    """
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    cap = env.spec.max_steps if max_steps is None else max_steps
    scores = []
    for ep in range(episodes):
        env.reset(derive_seed(seed, "baseline-env", ep))
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "baseline-act", ep)))
        total, steps, done = 0.0, 0, False
        while not done and steps < cap:
            result = env.step(random_action(env.spec.action, rng))
            total += result.reward
            done = result.done
            steps += 1
        scores.append(total)
    arr = np.asarray(scores)
    return BaselineResult(float(arr.mean()), float(arr.std()), tuple(float(s) for s in scores))
