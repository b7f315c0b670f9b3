"""HTTP facade over the training, evaluation, and analysis pipelines.

The service works on paths local to the host it runs on; the CLI mounts the
app in-process by default, so those are normally the caller's own paths.
User mistakes (bad config, missing checkpoint, layout mismatch) map to 400;
unexpected failures to 500.
"""

from __future__ import annotations

import functools
import os

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import RunConfig, train_run_from_config
from ..envs import compatible_modifications
from ..errors import PatchvoteError
from ..genome import load_genome
from ..harness import (
    EnvSource,
    RolloutPool,
    evaluate_episodes,
    format_suite_table,
    generalization_suite,
    train,
)
from ..visualize import run_importance_analysis, visualize_episode
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    EvaluateRequest,
    EvaluateResponse,
    GeneralizeRequest,
    GeneralizeResponse,
    HealthResponse,
    RangeSummary,
    SuiteRowModel,
    TrainRequest,
    TrainResponse,
    VisualizeRequest,
    VisualizeResponse,
)


def _translating(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HTTPException:
            raise
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except PatchvoteError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except Exception as exc:  # noqa: BLE001 - surfaced as a 500 with context
            raise HTTPException(status_code=500, detail=f"{type(exc).__name__}: {exc}") from exc
    return wrapper


def _load_checkpoint(path: str, bridge: str | None):
    if not os.path.exists(path):
        raise HTTPException(status_code=400, detail=f"checkpoint not found: {path}")
    values, config, header = load_genome(path)
    if bridge is not None:
        source = EnvSource(bridge=bridge)
    else:
        env_info = header.get("env")
        if not env_info:
            raise HTTPException(
                status_code=400,
                detail=f"{path} records no environment; pass a bridge endpoint",
            )
        source = EnvSource.from_dict(env_info)
    return values, config, source


def create_app() -> FastAPI:
    app = FastAPI(title="patchvote", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/defaults", response_model=RunConfig)
    def defaults() -> RunConfig:
        return RunConfig.model_validate(
            {"training": {"generations": 1000}, "output": {"dir": "runs/out"}}
        )

    @app.post("/train", response_model=TrainResponse)
    @_translating
    def train_endpoint(request: TrainRequest) -> TrainResponse:
        run = train_run_from_config(
            request.config,
            seed_override=request.seed,
            out_override=request.out_dir,
            bridge_override=request.bridge,
        )
        result = train(run, workers=request.workers, resume=request.resume)
        return TrainResponse(
            generations_run=result.generations_run,
            best_fitness=result.best_fitness,
            eval_mean=result.eval_mean,
            eval_std=result.eval_std,
            stopped_early=result.stopped_early,
            out_dir=result.out_dir,
            metrics_path=result.metrics_path,
            genome_path=result.genome_path,
            mean_genome_path=result.mean_genome_path,
            optimizer_path=result.optimizer_path,
        )

    @app.post("/evaluate", response_model=EvaluateResponse)
    @_translating
    def evaluate_endpoint(request: EvaluateRequest) -> EvaluateResponse:
        values, config, source = _load_checkpoint(request.checkpoint, request.bridge)
        with RolloutPool(request.workers) as pool:
            scores = evaluate_episodes(
                values, config, source, request.episodes, request.seed, pool,
                domain="eval", generation=0, max_steps=request.max_steps,
            )
        return EvaluateResponse(
            mean=float(np.nanmean(scores)),
            std=float(np.nanstd(scores)),
            episodes=request.episodes,
            scores=[float(s) for s in scores],
        )

    @app.post("/generalize", response_model=GeneralizeResponse)
    @_translating
    def generalize_endpoint(request: GeneralizeRequest) -> GeneralizeResponse:
        values, config, source = _load_checkpoint(request.checkpoint, request.bridge)
        mods = request.modifications
        if mods is None:
            mods = list(compatible_modifications(source.name)) if source.name else []
        rows = generalization_suite(
            values, config, source, mods, request.episodes, request.seed,
            workers=request.workers, max_steps=request.max_steps,
        )
        table = format_suite_table(rows)
        out_path = None
        if request.out_path:
            os.makedirs(os.path.dirname(request.out_path) or ".", exist_ok=True)
            with open(request.out_path, "w", encoding="ascii") as f:
                f.write(table)
            out_path = request.out_path
        return GeneralizeResponse(
            rows=[
                SuiteRowModel(
                    label=r.label, mean=r.mean, std=r.std,
                    episodes=r.episodes, error=r.error,
                )
                for r in rows
            ],
            table=table,
            out_path=out_path,
        )

    @app.post("/visualize", response_model=VisualizeResponse)
    @_translating
    def visualize_endpoint(request: VisualizeRequest) -> VisualizeResponse:
        values, config, source = _load_checkpoint(request.checkpoint, request.bridge)
        paths, trace = visualize_episode(
            values, config, source, request.seed, request.out_dir,
            max_steps=request.max_steps, png=request.png,
        )
        return VisualizeResponse(
            steps=len(trace),
            score=trace.score,
            out_dir=request.out_dir,
            frames=paths,
        )

    @app.post("/analyze", response_model=AnalyzeResponse)
    @_translating
    def analyze_endpoint(request: AnalyzeRequest) -> AnalyzeResponse:
        values, config, source = _load_checkpoint(request.checkpoint, request.bridge)
        report = run_importance_analysis(
            values, config, source, request.episodes, request.seed,
            request.out_dir, max_steps=request.max_steps,
            top_quantile=request.top_quantile, bins=request.bins,
            samples_per_range=request.samples_per_range, png=request.png,
        )
        return AnalyzeResponse(
            episodes=report.episodes,
            steps=report.steps,
            quantile_floor=report.quantile_floor,
            histogram_bins=len(report.histogram_counts),
            out_dir=request.out_dir,
            ranges=[
                RangeSummary(
                    quantiles=spec.quantiles,
                    values=spec.values,
                    exemplars=len(spec.patches),
                )
                for spec in report.ranges
            ],
        )

    return app
