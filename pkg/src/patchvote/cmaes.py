"""Full-covariance evolution strategy with step-size and covariance adaptation.

This is the canonical (mu/mu_w, lambda) strategy with positive log-linear
recombination weights, cumulative step-size control, and rank-one plus
rank-mu covariance updates. Selection is purely rank based, so any strictly
increasing transform of the fitness values leaves the search trajectory
unchanged. The public API maximizes: higher fitness is better.

The eigendecomposition of the covariance matrix is refreshed lazily every
``ceil(1 / (10 * dim * (c1 + cmu)))`` generations, which keeps the cubic
factorization amortized for large parameter vectors.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyArchiveError

EIGEN_FLOOR = 1e-20


@dataclass(frozen=True)
class CmaConfig:
    """Static strategy settings.

    ``parents`` defaults to ``population // 2``. Learning rates are derived
    from the problem dimension and population at construction time.
    """

    population: int
    sigma0: float = 0.1
    parents: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ConfigurationError("population must be >= 2")
        if self.sigma0 <= 0:
            raise ConfigurationError("sigma0 must be positive")
        mu = self.population // 2 if self.parents is None else self.parents
        if not 1 <= mu <= self.population:
            raise ConfigurationError("parents must be in [1, population]")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


class CmaEs:
    """Ask/tell optimizer over a flat real vector, maximizing fitness."""

    def __init__(self, x0: np.ndarray, config: CmaConfig):
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.ndim != 1:
            raise ConfigurationError("x0 must be a flat vector")
        self.config = config
        self.dim = n = x0.shape[0]
        self.lam = config.population
        self.mu = config.population // 2 if config.parents is None else config.parents

        # Positive log-linear recombination weights, normalized to sum 1.
        w = np.log((self.lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = float(1.0 / np.sum(self.weights**2))

        self.c_sigma = (self.mueff + 2) / (n + self.mueff + 5)
        self.d_sigma = (
            1
            + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1)
            + self.c_sigma
        )
        self.c_c = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.c_mu = min(
            1 - self.c_1,
            2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff),
        )
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.eigen_gap = max(1, math.ceil(1.0 / (10 * n * (self.c_1 + self.c_mu))))

        self.mean = x0.copy()
        self.sigma = float(config.sigma0)
        self.cov = np.eye(n)
        self.path_sigma = np.zeros(n)
        self.path_cov = np.zeros(n)
        self.generation = 0
        self.rng = np.random.Generator(np.random.PCG64(config.seed))

        self._eigen_basis = np.eye(n)      # columns are eigenvectors
        self._eigen_scale = np.ones(n)     # sqrt of eigenvalues
        self._eigen_stale = 0              # generations since last refresh

        self._best_x: np.ndarray | None = None
        self._best_fitness = -np.inf
        self.nan_count = 0                 # cumulative NaN fitnesses seen

    # -- sampling ----------------------------------------------------------

    def _refresh_eigensystem(self) -> None:
        vals, vecs = np.linalg.eigh(self.cov)
        if vals.min() < EIGEN_FLOOR:
            warnings.warn(
                f"covariance eigenvalues clamped at {EIGEN_FLOOR} "
                f"(min was {vals.min():.3e})",
                RuntimeWarning,
                stacklevel=3,
            )
            vals = np.maximum(vals, EIGEN_FLOOR)
        self._eigen_basis = vecs
        self._eigen_scale = np.sqrt(vals)
        self._eigen_stale = 0

    def ask(self) -> np.ndarray:
        """Sample the population: a (population, dim) array of candidates."""
        if self._eigen_stale >= self.eigen_gap:
            self._refresh_eigensystem()
        z = self.rng.standard_normal((self.lam, self.dim))
        return self.mean + self.sigma * (z * self._eigen_scale) @ self._eigen_basis.T

    # -- update ------------------------------------------------------------

    def tell(self, candidates: np.ndarray, fitnesses: np.ndarray) -> None:
        """Update mean, step size, paths, and covariance from ranked fitness.

        NaN fitnesses are ranked worst (and counted in ``nan_count``); all
        other values participate only through their rank.
        """
        candidates = np.asarray(candidates, dtype=np.float64)
        fitnesses = np.asarray(fitnesses, dtype=np.float64)
        if candidates.shape != (self.lam, self.dim):
            raise ConfigurationError(
                f"expected candidates of shape {(self.lam, self.dim)}, got {candidates.shape}"
            )
        if fitnesses.shape != (self.lam,):
            raise ConfigurationError(f"expected {self.lam} fitnesses")

        nan_mask = np.isnan(fitnesses)
        self.nan_count += int(nan_mask.sum())
        keyed = np.where(nan_mask, -np.inf, fitnesses)
        # Maximization: best first. Stable mergesort keeps degenerate
        # (all-equal) rankings deterministic.
        order = np.argsort(-keyed, kind="stable")
        elite = candidates[order[: self.mu]]

        best_i = int(order[0])
        if not nan_mask[best_i] and fitnesses[best_i] > self._best_fitness:
            self._best_fitness = float(fitnesses[best_i])
            self._best_x = candidates[best_i].copy()

        mean_old = self.mean
        self.mean = self.weights @ elite
        shift = (self.mean - mean_old) / self.sigma

        # C^(-1/2) via the cached eigensystem (lazy refresh is intentional).
        inv_sqrt_shift = self._eigen_basis @ (
            (self._eigen_basis.T @ shift) / self._eigen_scale
        )
        cs = self.c_sigma
        self.path_sigma = (1 - cs) * self.path_sigma + math.sqrt(
            cs * (2 - cs) * self.mueff
        ) * inv_sqrt_shift

        self.generation += 1
        norm = float(np.linalg.norm(self.path_sigma))
        expected = math.sqrt(1 - (1 - cs) ** (2 * self.generation)) * self.chi_n
        h_sigma = 1.0 if norm < (1.4 + 2 / (self.dim + 1)) * expected else 0.0

        cc = self.c_c
        self.path_cov = (1 - cc) * self.path_cov + h_sigma * math.sqrt(
            cc * (2 - cc) * self.mueff
        ) * shift

        steps = (elite - mean_old) / self.sigma
        rank_mu = (self.weights[:, None] * steps).T @ steps
        rank_one = np.outer(self.path_cov, self.path_cov)
        # (1 - h_sigma) correction keeps the covariance from shrinking when
        # the rank-one path is stalled.
        self.cov = (
            (1 - self.c_1 - self.c_mu) * self.cov
            + self.c_1 * (rank_one + (1 - h_sigma) * cc * (2 - cc) * self.cov)
            + self.c_mu * rank_mu
        )
        self.cov = (self.cov + self.cov.T) / 2.0
        self._eigen_stale += 1

        self.sigma *= math.exp((cs / self.d_sigma) * (norm / self.chi_n - 1))

    def best(self) -> tuple[np.ndarray, float]:
        """Best-ever evaluated candidate and its fitness."""
        if self._best_x is None:
            raise EmptyArchiveError("no candidates evaluated yet")
        return self._best_x.copy(), self._best_fitness

    # -- persistence -------------------------------------------------------

    CHECKPOINT_FORMAT = 1

    def save(self, path: str) -> None:
        """Binary dump of the full optimizer state, rng included, so a
        resumed run continues the exact trajectory."""
        meta = {
            "format": self.CHECKPOINT_FORMAT,
            "dim": self.dim,
            "config": {
                "population": self.config.population,
                "sigma0": self.config.sigma0,
                "parents": self.config.parents,
                "seed": self.config.seed,
            },
            "sigma": self.sigma,
            "generation": self.generation,
            "eigen_stale": self._eigen_stale,
            "best_fitness": None if self._best_x is None else self._best_fitness,
            "nan_count": self.nan_count,
            "rng_state": self.rng.bit_generator.state,
        }
        arrays = {
            "mean": self.mean,
            "cov": self.cov,
            "path_sigma": self.path_sigma,
            "path_cov": self.path_cov,
            "eigen_basis": self._eigen_basis,
            "eigen_scale": self._eigen_scale,
            "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        }
        if self._best_x is not None:
            arrays["best_x"] = self._best_x
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path: str) -> "CmaEs":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("format") != cls.CHECKPOINT_FORMAT:
                raise ConfigurationError(
                    f"{path}: unsupported optimizer checkpoint format"
                )
            cfg = CmaConfig(**meta["config"])
            es = cls(data["mean"], cfg)
            es.mean = data["mean"].astype(np.float64)
            es.cov = data["cov"].astype(np.float64)
            es.path_sigma = data["path_sigma"].astype(np.float64)
            es.path_cov = data["path_cov"].astype(np.float64)
            es._eigen_basis = data["eigen_basis"].astype(np.float64)
            es._eigen_scale = data["eigen_scale"].astype(np.float64)
            es.sigma = float(meta["sigma"])
            es.generation = int(meta["generation"])
            es._eigen_stale = int(meta["eigen_stale"])
            es.nan_count = int(meta["nan_count"])
            if meta["best_fitness"] is not None:
                es._best_fitness = float(meta["best_fitness"])
                es._best_x = data["best_x"].astype(np.float64)
            state = meta["rng_state"]
            state["state"] = {k: int(v) for k, v in state["state"].items()}
            es.rng.bit_generator.state = state
        return es
