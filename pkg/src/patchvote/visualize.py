"""Episode visualization and analysis artifacts written to disk."""

from __future__ import annotations

import json
import os

import numpy as np

from .genome import AgentConfig
from .harness import (
    AnalysisReport,
    EnvSource,
    EpisodeTrace,
    importance_analysis,
    rollout_episode,
)
from .imaging import overlay_selection, write_png, write_ppm
from .seeding import derive_seed


def _write_image(path_base: str, image_u8: np.ndarray, png: bool) -> str:
    if png:
        path = path_base + ".png"
        write_png(path, image_u8)
    else:
        path = path_base + ".ppm"
        write_ppm(path, image_u8)
    return path


def write_episode_log(path: str, trace: EpisodeTrace) -> None:
    """Line-delimited episode record: step, action, reward, done."""
    steps = len(trace)
    with open(path, "w", encoding="ascii") as f:
        f.write("step\taction\treward\tdone\n")
        for t in range(steps):
            action = trace.actions[t]
            if isinstance(action, np.ndarray) or np.ndim(action) > 0:
                action_text = ",".join(repr(float(v)) for v in np.atleast_1d(action))
            else:
                action_text = str(int(action))
            done = t == steps - 1 and trace.finished
            f.write(f"{t}\t{action_text}\t{trace.rewards[t]!r}\t{int(done)}\n")


def visualize_episode(
    values: np.ndarray,
    config: AgentConfig,
    source: EnvSource,
    seed: int,
    out_dir: str,
    max_steps: int | None = None,
    png: bool = False,
) -> tuple[list[str], EpisodeTrace]:
    """Roll one episode and write one overlay image per step.

    The selected patch windows are whitened on top of the frame the agent
    actually saw; opacity follows each patch's importance relative to the
    other selections of that step.
    """
    os.makedirs(out_dir, exist_ok=True)
    env = source.make()
    try:
        _, trace = rollout_episode(
            values, config, env, derive_seed(seed, "viz", 0),
            max_steps=max_steps, want_trace=True, keep_frames=True,
        )
    finally:
        env.close()
    assert trace is not None and trace.frames is not None
    paths = []
    width = len(str(max(len(trace), 1)))
    for t in range(len(trace)):
        frame = trace.frames[t].astype(np.float64) / 255.0
        overlay = overlay_selection(
            frame, trace.selected[t], trace.selected_importance[t], config.grid
        )
        base = os.path.join(out_dir, f"step_{t:0{width}d}")
        paths.append(_write_image(base, overlay, png))
    write_episode_log(os.path.join(out_dir, "episode.tsv"), trace)
    return paths, trace


def run_importance_analysis(
    values: np.ndarray,
    config: AgentConfig,
    source: EnvSource,
    episodes: int,
    seed: int,
    out_dir: str,
    max_steps: int | None = None,
    top_quantile: float = 0.05,
    bins: int = 32,
    samples_per_range: int = 8,
    png: bool = False,
) -> AnalysisReport:
    """Collect traced episodes and write the importance report to disk.

    Episodes are re-rolled deterministically for the sampling pass, so only
    one episode's frames are held in memory at a time.
    """
    os.makedirs(out_dir, exist_ok=True)

    def provider():
        env = source.make()
        try:
            for ep in range(episodes):
                _, trace = rollout_episode(
                    values, config, env, derive_seed(seed, "analyze", ep),
                    max_steps=max_steps, want_trace=True,
                    keep_frames=True, keep_importance=True,
                )
                yield trace
        finally:
            env.close()

    report = importance_analysis(
        provider, config.grid,
        top_quantile=top_quantile, bins=bins,
        samples_per_range=samples_per_range, rng_seed=seed,
    )
    write_analysis_outputs(report, out_dir, png=png)
    return report


def write_analysis_outputs(report: AnalysisReport, out_dir: str, png: bool = False) -> None:
    with open(os.path.join(out_dir, "histogram.tsv"), "w", encoding="ascii") as f:
        f.write("bin_low\tbin_high\tcount\n")
        if len(report.histogram_counts) == 1 and len(report.histogram_edges) == 2:
            f.write(
                f"{report.histogram_edges[0]!r}\t{report.histogram_edges[1]!r}\t{int(report.histogram_counts[0])}\n"
            )
        else:
            for i, count in enumerate(report.histogram_counts):
                f.write(
                    f"{report.histogram_edges[i]!r}\t{report.histogram_edges[i + 1]!r}\t{int(count)}\n"
                )
    exemplar_rows = []
    for ri, spec in enumerate(report.ranges):
        range_dir = os.path.join(out_dir, f"range_{ri}")
        os.makedirs(range_dir, exist_ok=True)
        for pi, (patch, value) in enumerate(zip(spec.patches, spec.importances)):
            path = _write_image(os.path.join(range_dir, f"patch_{pi:02d}"), patch, png)
            exemplar_rows.append((ri, spec.quantiles, value, path))
    with open(os.path.join(out_dir, "exemplars.tsv"), "w", encoding="ascii") as f:
        f.write("range\tq_low\tq_high\timportance\tpath\n")
        for ri, (q_lo, q_hi), value, path in exemplar_rows:
            f.write(f"{ri}\t{q_lo!r}\t{q_hi!r}\t{value!r}\t{os.path.basename(path)}\n")
    summary = {
        "episodes": report.episodes,
        "steps": report.steps,
        "quantile_floor": report.quantile_floor,
        "ranges": [
            {
                "quantiles": list(spec.quantiles),
                "values": list(spec.values),
                "exemplars": len(spec.patches),
            }
            for spec in report.ranges
        ],
    }
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1)
