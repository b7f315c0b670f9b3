"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..config import RunConfig


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(_Model):
    status: str
    version: str


class TrainRequest(_Model):
    config: RunConfig
    workers: int = 1
    resume: bool = False
    seed: int | None = None
    out_dir: str | None = None
    bridge: str | None = None


class TrainResponse(_Model):
    generations_run: int
    best_fitness: float
    eval_mean: float | None
    eval_std: float | None
    stopped_early: bool
    out_dir: str
    metrics_path: str
    genome_path: str
    mean_genome_path: str
    optimizer_path: str


class EvaluateRequest(_Model):
    checkpoint: str
    episodes: int = 100
    seed: int = 0
    workers: int = 1
    max_steps: int | None = None
    bridge: str | None = None


class EvaluateResponse(_Model):
    mean: float
    std: float
    episodes: int
    scores: list[float]


class GeneralizeRequest(_Model):
    checkpoint: str
    episodes: int = 100
    seed: int = 0
    workers: int = 1
    max_steps: int | None = None
    modifications: list[str] | None = None  # default: all compatible kinds
    out_path: str | None = None
    bridge: str | None = None  # bridged envs: only the unmodified row runs


class SuiteRowModel(_Model):
    label: str
    mean: float
    std: float
    episodes: int
    error: str | None = None


class GeneralizeResponse(_Model):
    rows: list[SuiteRowModel]
    table: str
    out_path: str | None


class VisualizeRequest(_Model):
    checkpoint: str
    seed: int = 0
    out_dir: str
    max_steps: int | None = None
    png: bool = False
    bridge: str | None = None


class VisualizeResponse(_Model):
    steps: int
    score: float
    out_dir: str
    frames: list[str]


class AnalyzeRequest(_Model):
    checkpoint: str
    episodes: int = 20
    seed: int = 0
    out_dir: str
    max_steps: int | None = None
    top_quantile: float = 0.05
    bins: int = 32
    samples_per_range: int = 8
    png: bool = False
    bridge: str | None = None


class RangeSummary(_Model):
    quantiles: tuple[float, float]
    values: tuple[float, float]
    exemplars: int


class AnalyzeResponse(_Model):
    episodes: int
    steps: int
    quantile_floor: float
    histogram_bins: int
    out_dir: str
    ranges: list[RangeSummary]
