"""Episode rollouts, fitness evaluation, training loop, and analyses.

Fitness jobs are pure functions of (genome, config, env source, seeds), so
populations can be evaluated by any number of worker processes in any order
and still produce the identical fitness vector. Episode seeds derive from
(run seed, domain tag, generation, individual, rollout); training and
evaluation use different domain tags and therefore disjoint seed families.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .agent import Agent
from .bridge import BridgedEnv
from .cmaes import CmaConfig, CmaEs
from .envs import EnvModification, make_env
from .envs.base import Env
from .errors import (
    BridgeError,
    CodecError,
    ConfigurationError,
    EmptyReportError,
    NumericError,
    RolloutError,
)
from .genome import AgentConfig, build_layout, save_genome
from .imaging import resize_nearest, to_u8
from .patches import PatchGrid
from .seeding import derive_seed

METRICS_FILE = "metrics.tsv"
OPTIMIZER_FILE = "optimizer.npz"
BEST_GENOME_FILE = "best.genome"
MEAN_GENOME_FILE = "mean.genome"
RUN_FILE = "run.json"

METRICS_COLUMNS = (
    "generation",
    "fitness_best",
    "fitness_mean",
    "fitness_min",
    "best_ever",
    "nan_rollouts",
    "eval_mean",
    "eval_std",
)


# -- environment sources ---------------------------------------------------


@dataclass(frozen=True)
class EnvSource:
    """Picklable recipe for building the environment inside a worker."""

    name: str | None = None
    size: int | None = None
    max_steps: int | None = None
    modification: EnvModification | None = None
    bridge: str | None = None

    def __post_init__(self) -> None:
        if (self.name is None) == (self.bridge is None):
            raise ConfigurationError("EnvSource needs exactly one of name or bridge")

    def make(self) -> Env:
        if self.bridge is not None:
            return BridgedEnv.connect(self.bridge)
        return make_env(self.name, size=self.size, max_steps=self.max_steps,
                        modification=self.modification)

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "size": self.size,
            "max_steps": self.max_steps,
            "modification": None if self.modification is None else self.modification.kind,
            "bridge": self.bridge,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EnvSource":
        mod = d.get("modification")
        return cls(
            name=d.get("name"),
            size=d.get("size"),
            max_steps=d.get("max_steps"),
            modification=EnvModification(mod) if mod else None,
            bridge=d.get("bridge"),
        )


@dataclass(frozen=True)
class RolloutPlan:
    """How one fitness value is produced: R rollouts, averaged."""

    env: EnvSource
    rollouts: int = 16
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.rollouts < 1:
            raise ConfigurationError("rollouts must be >= 1")


@dataclass
class EpisodeTrace:
    """Optional per-step record of what the agent saw and did."""

    selected: np.ndarray                 # (T, K) int32
    selected_importance: np.ndarray      # (T, K) float64
    actions: np.ndarray                  # (T, dim) float64 or (T,) int64
    rewards: np.ndarray                  # (T,) float64
    score: float
    aborted: bool = False
    finished: bool = False               # env reported done (vs. cap/abort)
    frames: np.ndarray | None = None     # (T, L, L, 3) uint8, agent's input
    importance: np.ndarray | None = None  # (T, N) float32, full vote vector

    def __len__(self) -> int:
        return len(self.rewards)


# -- rollouts ---------------------------------------------------------------


def preprocess(frame: np.ndarray, input_size: int) -> np.ndarray:
    """Observation to agent input: values already in [0, 1]; resize if the
    environment's side length differs from the agent's."""
    if frame.shape[0] != input_size or frame.shape[1] != input_size:
        frame = resize_nearest(frame, input_size)
    return frame


def rollout_episode(
    values: np.ndarray,
    config: AgentConfig,
    env: Env,
    seed: int,
    max_steps: int | None = None,
    want_trace: bool = False,
    keep_frames: bool = False,
    keep_importance: bool = False,
) -> tuple[float, EpisodeTrace | None]:
    """Play one episode; returns (score, trace or None).

    A non-finite controller output aborts the episode with the environment's
    minimum score and sets the trace's aborted flag. Environment or session
    failures raise RolloutError.
    """
    agent = Agent.from_genome(values, config)
    agent.reset()
    cap = env.spec.max_steps if max_steps is None else min(max_steps, env.spec.max_steps)

    selected: list[np.ndarray] = []
    sel_importance: list[np.ndarray] = []
    actions: list[Any] = []
    rewards: list[float] = []
    frames: list[np.ndarray] = []
    importances: list[np.ndarray] = []
    aborted = False

    try:
        frame = preprocess(env.reset(seed), config.input_size)
        done = False
        steps = 0
        while not done and steps < cap:
            try:
                action, info = agent.act(frame)
            except NumericError:
                aborted = True
                break
            if want_trace:
                selected.append(info.selected)
                sel_importance.append(info.selected_importance)
                actions.append(action)
                if keep_frames:
                    frames.append(to_u8(frame))
                if keep_importance:
                    importances.append(info.importance.astype(np.float32))
            result = env.step(action)
            rewards.append(result.reward)
            frame = preprocess(result.frame, config.input_size)
            done = result.done
            steps += 1
    except BridgeError as exc:
        raise RolloutError(f"bridged episode failed: {exc}") from exc

    score = float(np.sum(rewards)) if rewards else 0.0
    if aborted:
        score = env.spec.min_score
    if not want_trace:
        return score, None
    steps_traced = len(selected)
    trace = EpisodeTrace(
        selected=np.asarray(selected, dtype=np.int32).reshape(steps_traced, config.top_k),
        selected_importance=np.asarray(sel_importance, dtype=np.float64).reshape(
            steps_traced, config.top_k
        ),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards, dtype=np.float64),
        score=score,
        aborted=aborted,
        finished=done,
        frames=np.asarray(frames, dtype=np.uint8).reshape(
            steps_traced, config.input_size, config.input_size, 3
        ) if keep_frames else None,
        importance=np.asarray(importances, dtype=np.float32).reshape(
            steps_traced, config.grid.count
        ) if keep_importance else None,
    )
    return score, trace


# -- worker jobs -----------------------------------------------------------

_ENV_CACHE: dict[str, Env] = {}


def _cached_env(source: EnvSource) -> Env:
    key = repr(source)
    env = _ENV_CACHE.get(key)
    if env is None:
        env = source.make()
        _ENV_CACHE[key] = env
    return env


def _evict_env(source: EnvSource) -> None:
    # A dead bridge session must not be reused by the next job.
    env = _ENV_CACHE.pop(repr(source), None)
    if env is not None:
        try:
            env.close()
        except Exception:  # noqa: BLE001 - teardown of a broken session
            pass


def _fitness_job(payload) -> tuple[int, float]:
    """Evaluate one individual: mean score over the plan's rollouts.

    Failed sessions (broken adapter, refused connect) yield NaN fitness so
    long runs survive flaky external processes; the cached session is
    dropped and the next job reconnects.
    """
    index, values, config, plan, seeds = payload
    scores = np.empty(len(seeds))
    try:
        env = _cached_env(plan.env)
        for r, seed in enumerate(seeds):
            scores[r], _ = rollout_episode(values, config, env, seed, plan.max_steps)
    except (RolloutError, BridgeError):
        _evict_env(plan.env)
        return index, float("nan")
    return index, float(scores.mean())


def _episodes_job(payload) -> tuple[int, list[float]]:
    """Evaluate one genome over a chunk of episodes; returns (chunk id, scores)."""
    chunk_id, values, config, source, seeds, max_steps = payload
    out: list[float] = []
    try:
        env = _cached_env(source)
        for seed in seeds:
            score, _ = rollout_episode(values, config, env, seed, max_steps)
            out.append(score)
    except (RolloutError, BridgeError):
        _evict_env(source)
        out.extend([float("nan")] * (len(seeds) - len(out)))
    return chunk_id, out


class RolloutPool:
    """Spread independent jobs over worker processes; inline when workers=1.

    Results are keyed, so the outcome is identical for any worker count or
    completion order.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, workers)
        self._executor: ProcessPoolExecutor | None = None
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(
                max_workers=self.workers, mp_context=get_context("spawn")
            )

    def run(self, fn: Callable, payloads: Sequence) -> dict:
        if self._executor is None:
            return dict(fn(p) for p in payloads)
        futures = [self._executor.submit(fn, p) for p in payloads]
        return dict(f.result() for f in futures)

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self) -> "RolloutPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# -- fitness and evaluation --------------------------------------------------


def fitness_seeds(plan: RolloutPlan, run_seed: int, generation: int) -> list[int]:
    """Episode seeds for one generation's fitness rollouts.

    The whole population shares the generation's seed set (common random
    numbers): with only a handful of rollouts per fitness value, giving each
    individual its own episodes makes the ranking mostly measure episode
    luck, which stalls rank-based selection. Seeds rotate every generation.
    """
    return [derive_seed(run_seed, "train", generation, r) for r in range(plan.rollouts)]


def evaluate_fitness(
    values: np.ndarray,
    config: AgentConfig,
    plan: RolloutPlan,
    run_seed: int,
    generation: int,
) -> float:
    """Mean score over the plan's rollouts with derived seeds (serial path)."""
    _, fitness = _fitness_job(
        (0, values, config, plan, fitness_seeds(plan, run_seed, generation))
    )
    return fitness


def population_fitness(
    population: np.ndarray,
    config: AgentConfig,
    plan: RolloutPlan,
    run_seed: int,
    generation: int,
    pool: RolloutPool,
) -> np.ndarray:
    seeds = fitness_seeds(plan, run_seed, generation)
    payloads = [
        (i, values, config, plan, seeds) for i, values in enumerate(population)
    ]
    results = pool.run(_fitness_job, payloads)
    return np.array([results[i] for i in range(len(population))])


def evaluate_episodes(
    values: np.ndarray,
    config: AgentConfig,
    source: EnvSource,
    episodes: int,
    run_seed: int,
    pool: RolloutPool,
    domain: str = "eval",
    generation: int = 0,
    max_steps: int | None = None,
) -> np.ndarray:
    """Scores over ``episodes`` held-out episodes (seed domain ``domain``)."""
    seeds = [derive_seed(run_seed, domain, generation, ep, 0) for ep in range(episodes)]
    chunk = max(1, (episodes + 2 * pool.workers - 1) // (2 * pool.workers))
    payloads = []
    for cid, start in enumerate(range(0, episodes, chunk)):
        payloads.append((cid, values, config, source, seeds[start : start + chunk], max_steps))
    results = pool.run(_episodes_job, payloads)
    scores: list[float] = []
    for cid in range(len(payloads)):
        scores.extend(results[cid])
    return np.asarray(scores)


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainRun:
    config: AgentConfig
    optimizer: CmaConfig
    plan: RolloutPlan
    generations: int
    out_dir: str
    eval_every: int = 10
    eval_episodes: int = 100
    seed: int = 0
    target_score: float | None = None


@dataclass
class TrainResult:
    generations_run: int
    best_fitness: float
    eval_mean: float | None
    eval_std: float | None
    stopped_early: bool
    out_dir: str

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.out_dir, METRICS_FILE)

    @property
    def genome_path(self) -> str:
        return os.path.join(self.out_dir, BEST_GENOME_FILE)

    @property
    def mean_genome_path(self) -> str:
        return os.path.join(self.out_dir, MEAN_GENOME_FILE)

    @property
    def optimizer_path(self) -> str:
        return os.path.join(self.out_dir, OPTIMIZER_FILE)


def _atomic_write(path: str, writer: Callable[[str], None]) -> None:
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _append_metrics(path: str, row: dict) -> None:
    fresh = not os.path.exists(path)
    with open(path, "a", encoding="ascii") as f:
        if fresh:
            f.write("\t".join(METRICS_COLUMNS) + "\n")
        f.write("\t".join(_format_cell(row.get(c)) for c in METRICS_COLUMNS) + "\n")


def _truncate_metrics(path: str, last_generation: int) -> None:
    if not os.path.exists(path):
        return
    with open(path, encoding="ascii") as f:
        lines = f.readlines()
    kept = [lines[0]] if lines else []
    for line in lines[1:]:
        gen = int(line.split("\t", 1)[0])
        if gen <= last_generation:
            kept.append(line)
    with open(path, "w", encoding="ascii") as f:
        f.writelines(kept)


def train(run: TrainRun, workers: int = 1, resume: bool = False,
          on_generation: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the ask/evaluate/tell loop, checkpointing every generation.

    Resume continues the exact trajectory of the uninterrupted run: the
    optimizer checkpoint carries the sampler state, and all episode seeds are
    derived from (seed, domain, generation, ...) rather than drawn from a
    shared stream.
    """
    os.makedirs(run.out_dir, exist_ok=True)
    layout_hash = build_layout(run.config).hash()
    run_path = os.path.join(run.out_dir, RUN_FILE)
    metrics_path = os.path.join(run.out_dir, METRICS_FILE)
    opt_path = os.path.join(run.out_dir, OPTIMIZER_FILE)
    best_path = os.path.join(run.out_dir, BEST_GENOME_FILE)
    mean_path = os.path.join(run.out_dir, MEAN_GENOME_FILE)

    if resume:
        if not os.path.exists(run_path) or not os.path.exists(opt_path):
            raise ConfigurationError(f"nothing to resume in {run.out_dir}")
        with open(run_path, encoding="utf-8") as f:
            stored = json.load(f)
        if stored["layout_hash"] != layout_hash:
            raise CodecError(
                "genome layout of the stored run does not match this configuration; refusing to resume"
            )
        es = CmaEs.load(opt_path)
        _truncate_metrics(metrics_path, es.generation)
    else:
        layout = build_layout(run.config)
        es = CmaEs(np.zeros(layout.total), run.optimizer)
        with open(run_path, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "layout_hash": layout_hash,
                    "config": run.config.to_dict(),
                    "env": run.plan.env.describe(),
                    "rollouts": run.plan.rollouts,
                    "rollout_max_steps": run.plan.max_steps,
                    "generations": run.generations,
                    "eval_every": run.eval_every,
                    "eval_episodes": run.eval_episodes,
                    "seed": run.seed,
                },
                f,
                indent=1,
            )
        if os.path.exists(metrics_path):
            os.remove(metrics_path)

    eval_mean: float | None = None
    eval_std: float | None = None
    stopped_early = False

    with RolloutPool(workers) as pool:
        while es.generation < run.generations:
            gen = es.generation + 1
            population = es.ask()
            fitness = population_fitness(
                population, run.config, run.plan, run.seed, gen, pool
            )
            nan_rollouts = int(np.isnan(fitness).sum())
            es.tell(population, fitness)

            best_values, best_fitness = es.best()
            row: dict[str, Any] = {
                "generation": gen,
                "fitness_best": float(np.nanmax(fitness)) if nan_rollouts < len(fitness) else float("nan"),
                "fitness_mean": float(np.nanmean(fitness)) if nan_rollouts < len(fitness) else float("nan"),
                "fitness_min": float(np.nanmin(fitness)) if nan_rollouts < len(fitness) else float("nan"),
                "best_ever": best_fitness,
                "nan_rollouts": nan_rollouts,
            }
            if run.eval_every > 0 and run.eval_episodes > 0 and gen % run.eval_every == 0:
                # The distribution mean is the optimizer's incumbent answer;
                # under R-rollout fitness noise it is a far less biased
                # estimate of learned skill than the lucky best-ever sample.
                scores = evaluate_episodes(
                    es.mean, run.config, run.plan.env, run.eval_episodes,
                    run.seed, pool, domain="eval", generation=gen,
                    max_steps=run.plan.max_steps,
                )
                eval_mean = float(np.nanmean(scores))
                eval_std = float(np.nanstd(scores))
                row["eval_mean"] = eval_mean
                row["eval_std"] = eval_std
            _append_metrics(metrics_path, row)

            _atomic_write(opt_path, es.save)
            _atomic_write(
                best_path,
                lambda tmp: save_genome(
                    tmp, best_values, run.config,
                    env=run.plan.env.describe(), fitness=best_fitness,
                ),
            )
            _atomic_write(
                mean_path,
                lambda tmp: save_genome(
                    tmp, es.mean.copy(), run.config,
                    env=run.plan.env.describe(), fitness=eval_mean,
                ),
            )
            if on_generation is not None:
                on_generation(row)
            if (
                run.target_score is not None
                and eval_mean is not None
                and eval_mean >= run.target_score
            ):
                stopped_early = True
                break

    best_fitness = es.best()[1] if es.generation > 0 else float("nan")
    return TrainResult(
        generations_run=es.generation,
        best_fitness=best_fitness,
        eval_mean=eval_mean,
        eval_std=eval_std,
        stopped_early=stopped_early,
        out_dir=run.out_dir,
    )


# -- generalization ------------------------------------------------------------


@dataclass(frozen=True)
class SuiteRow:
    label: str
    mean: float
    std: float
    episodes: int
    error: str | None = None


def generalization_suite(
    values: np.ndarray,
    config: AgentConfig,
    source: EnvSource,
    mods: Sequence[str],
    episodes: int,
    run_seed: int,
    workers: int = 1,
    max_steps: int | None = None,
) -> list[SuiteRow]:
    """Scores on the unmodified environment and under each modification.

    All rows share the same episode seeds, so rendering-only modifications
    leave a rendering-blind agent's row unchanged. Incompatible pairs are
    reported as rows with an error note rather than failing the suite.
    """
    rows: list[SuiteRow] = []
    with RolloutPool(workers) as pool:
        variants: list[tuple[str, EnvSource | None, str | None]] = [("original", source, None)]
        for kind in mods:
            try:
                mod = EnvModification(kind)
                modded = EnvSource(
                    name=source.name, size=source.size, max_steps=source.max_steps,
                    modification=mod, bridge=source.bridge,
                )
                probe = modded.make()  # validates compatibility eagerly
                probe.close()
                variants.append((kind, modded, None))
            except ConfigurationError as exc:
                variants.append((kind, None, str(exc)))
        for label, variant, error in variants:
            if variant is None:
                rows.append(SuiteRow(label, float("nan"), float("nan"), 0, error))
                continue
            scores = evaluate_episodes(
                values, config, variant, episodes, run_seed, pool,
                domain="generalize", generation=0, max_steps=max_steps,
            )
            rows.append(SuiteRow(label, float(np.nanmean(scores)), float(np.nanstd(scores)), episodes))
    return rows


def format_suite_table(rows: Iterable[SuiteRow]) -> str:
    lines = ["label\tmean\tstd\tepisodes\tnote"]
    for row in rows:
        note = row.error or ""
        lines.append(
            f"{row.label}\t{_format_cell(row.mean)}\t{_format_cell(row.std)}\t{row.episodes}\t{note}"
        )
    return "\n".join(lines) + "\n"


# -- importance analysis -------------------------------------------------------


@dataclass
class RangeExemplars:
    quantiles: tuple[float, float]
    values: tuple[float, float]
    patches: list[np.ndarray] = field(default_factory=list)
    importances: list[float] = field(default_factory=list)


@dataclass
class AnalysisReport:
    episodes: int
    steps: int
    quantile_floor: float
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray
    ranges: list[RangeExemplars]


DEFAULT_RANGES = ((0.995, 1.0), (0.94, 0.96), (0.0, 0.02))


def importance_analysis(
    trace_provider: Callable[[], Iterable[EpisodeTrace]],
    grid: PatchGrid,
    top_quantile: float = 0.05,
    bins: int = 32,
    ranges: Sequence[tuple[float, float]] = DEFAULT_RANGES,
    samples_per_range: int = 8,
    rng_seed: int = 0,
) -> AnalysisReport:
    """Histogram of the top importance values plus exemplar patches.

    ``trace_provider`` is called twice: the first pass pools importance
    values to fix the quantile thresholds, the second samples patch images
    from each requested quantile range (reservoir sampling, bounded memory).
    Traces must retain frames and full importance vectors.
    """
    pools: list[np.ndarray] = []
    episodes = 0
    steps = 0
    for trace in trace_provider():
        if trace.importance is None or trace.frames is None:
            raise EmptyReportError("analysis requires traces with frames and importance kept")
        episodes += 1
        steps += len(trace)
        pools.append(trace.importance.reshape(-1))
    if episodes == 0 or steps == 0:
        raise EmptyReportError("no traces to analyze")
    values = np.concatenate(pools).astype(np.float64)

    floor = float(np.quantile(values, 1.0 - top_quantile))
    top = values[values >= floor]
    if top.max() == top.min():
        hist_counts = np.array([top.size])
        hist_edges = np.array([top.min(), top.max()])
    else:
        hist_counts, hist_edges = np.histogram(top, bins=bins)

    range_specs = [
        RangeExemplars(
            quantiles=(lo, hi),
            values=(float(np.quantile(values, lo)), float(np.quantile(values, hi))),
        )
        for lo, hi in ranges
    ]

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    seen = [0] * len(range_specs)
    for trace in trace_provider():
        for t in range(len(trace)):
            importance = trace.importance[t]
            frame = trace.frames[t]
            for ri, spec in enumerate(range_specs):
                lo_v, hi_v = spec.values
                hits = np.where((importance >= lo_v) & (importance <= hi_v))[0]
                for patch_index in hits:
                    seen[ri] += 1
                    r, c = divmod(int(patch_index), grid.cols)
                    patch = frame[
                        r * grid.stride : r * grid.stride + grid.window,
                        c * grid.stride : c * grid.stride + grid.window,
                    ].copy()
                    if len(spec.patches) < samples_per_range:
                        spec.patches.append(patch)
                        spec.importances.append(float(importance[patch_index]))
                    else:
                        j = int(rng.integers(0, seen[ri]))
                        if j < samples_per_range:
                            spec.patches[j] = patch
                            spec.importances[j] = float(importance[patch_index])
    return AnalysisReport(
        episodes=episodes,
        steps=steps,
        quantile_floor=floor,
        histogram_counts=hist_counts,
        histogram_edges=hist_edges,
        ranges=range_specs,
    )
