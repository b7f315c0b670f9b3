import os
from pathlib import Path

import numpy as np
import pytest

from patchvote.attention import attention_matrix, importance_vector, select_top_k
from patchvote.cmaes import CmaConfig
from patchvote.controller import ActionSpec, reset_controller, step_controller
from patchvote.errors import CodecError, ConfigurationError, EmptyReportError
from patchvote.genome import AgentConfig, build_layout, decode, load_genome
from patchvote.harness import (
    EnvSource,
    EpisodeTrace,
    RolloutPlan,
    RolloutPool,
    TrainRun,
    evaluate_episodes,
    evaluate_fitness,
    format_suite_table,
    generalization_suite,
    importance_analysis,
    population_fitness,
    preprocess,
    rollout_episode,
    train,
)
from patchvote.patches import patch_centers, patchify
from patchvote.seeding import derive_seed

SMALL = AgentConfig(
    action=ActionSpec("discrete", 3),
    input_size=32, window=5, stride=4, embed_dim=2, top_k=4, hidden_size=4,
)
DODGE32 = EnvSource(name="dodge", size=32, max_steps=60)


def small_genome(seed=0, scale=0.3):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(build_layout(SMALL).total) * scale


def test_env_source_validation():
    with pytest.raises(ConfigurationError):
        EnvSource()
    with pytest.raises(ConfigurationError):
        EnvSource(name="dodge", bridge="tcp:localhost:1")
    assert EnvSource.from_dict(DODGE32.describe()) == DODGE32


def test_seed_derivation_distinct_domains():
    a = derive_seed(0, "train", 1, 2, 3)
    b = derive_seed(0, "eval", 1, 2, 3)
    assert a != b
    assert derive_seed(0, "train", 1, 2, 3) == a


def test_zero_genome_rollout_deterministic():
    env = DODGE32.make()
    g = np.zeros(build_layout(SMALL).total)
    s1, _ = rollout_episode(g, SMALL, env, seed=5)
    s2, _ = rollout_episode(g, SMALL, DODGE32.make(), seed=5)
    assert s1 == s2
    # zero genome drives action 0 ("left") every step
    _, trace = rollout_episode(g, SMALL, DODGE32.make(), seed=5, want_trace=True)
    assert set(np.asarray(trace.actions).tolist()) == {0}


def test_trace_contents_and_fidelity():
    env = DODGE32.make()
    score, trace = rollout_episode(
        small_genome(1), SMALL, env, seed=3, want_trace=True,
        keep_frames=True, keep_importance=True,
    )
    t = len(trace)
    assert 1 <= t <= 60
    assert trace.selected.shape == (t, SMALL.top_k)
    assert trace.selected_importance.shape == (t, SMALL.top_k)
    assert trace.rewards.shape == (t,)
    assert trace.frames.shape == (t, 32, 32, 3)
    assert trace.importance.shape == (t, SMALL.grid.count)
    assert (trace.selected >= 0).all() and (trace.selected < SMALL.grid.count).all()
    assert trace.score == score
    assert trace.score == np.sum(trace.rewards)


def test_rollout_respects_max_steps_cap():
    score, trace = rollout_episode(
        small_genome(2), SMALL, DODGE32.make(), seed=1, max_steps=7, want_trace=True
    )
    assert len(trace) <= 7


def test_pipeline_equivalence_with_scripted_composition():
    # The integrated rollout must match a step-by-step composition of the
    # individual operations for several random genomes.
    for seed in range(5):
        genome = small_genome(seed)
        integrated, trace = rollout_episode(
            genome, SMALL, DODGE32.make(), seed=11, want_trace=True
        )

        env = DODGE32.make()
        attn, lstm = decode(genome, SMALL)
        state = reset_controller(SMALL.hidden_size)
        frame = preprocess(env.reset(11), SMALL.input_size)
        total, done, steps = 0.0, False, 0
        rewards = []
        while not done and steps < 60:
            x = patchify(frame, SMALL.grid)
            a = attention_matrix(x, attn)
            imp = importance_vector(a)
            sel = select_top_k(imp, SMALL.top_k)
            feats = patch_centers(sel, SMALL.grid).reshape(-1)
            action, state = step_controller(feats, state, lstm, SMALL.action)
            result = env.step(action)
            rewards.append(result.reward)
            frame = preprocess(result.frame, SMALL.input_size)
            done = result.done
            steps += 1
        assert float(np.sum(rewards)) == integrated


def test_evaluate_fitness_single_rollout_equals_episode():
    plan = RolloutPlan(env=DODGE32, rollouts=1)
    g = small_genome(3)
    fitness = evaluate_fitness(g, SMALL, plan, run_seed=0, generation=1)
    env = DODGE32.make()
    score, _ = rollout_episode(g, SMALL, env, derive_seed(0, "train", 1, 0))
    assert fitness == score


def test_evaluate_fitness_repeatable():
    plan = RolloutPlan(env=DODGE32, rollouts=3)
    g = small_genome(4)
    a = evaluate_fitness(g, SMALL, plan, 0, 2)
    b = evaluate_fitness(g, SMALL, plan, 0, 2)
    assert a == b


def test_fitness_seeds_shared_within_generation_rotate_across():
    from patchvote.harness import fitness_seeds

    plan = RolloutPlan(env=DODGE32, rollouts=3)
    gen1 = fitness_seeds(plan, 0, 1)
    assert fitness_seeds(plan, 0, 1) == gen1
    assert fitness_seeds(plan, 0, 2) != gen1
    assert len(set(gen1)) == 3


def test_population_fitness_identical_serial_vs_pool():
    plan = RolloutPlan(env=DODGE32, rollouts=2)
    rng = np.random.Generator(np.random.PCG64(8))
    population = rng.standard_normal((6, build_layout(SMALL).total)) * 0.2
    with RolloutPool(1) as serial:
        f1 = population_fitness(population, SMALL, plan, 0, 1, serial)
    with RolloutPool(2) as pool:
        f2 = population_fitness(population, SMALL, plan, 0, 1, pool)
    np.testing.assert_array_equal(f1, f2)


def test_evaluate_episodes_chunking_invariant():
    g = small_genome(5)
    with RolloutPool(1) as one:
        a = evaluate_episodes(g, SMALL, DODGE32, 7, 0, one)
    with RolloutPool(3) as three:
        b = evaluate_episodes(g, SMALL, DODGE32, 7, 0, three)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 7


def smoke_run(tmp_path, name="run", **overrides) -> TrainRun:
    settings = dict(
        config=SMALL,
        optimizer=CmaConfig(population=6, sigma0=0.1, seed=0),
        plan=RolloutPlan(env=DODGE32, rollouts=1, max_steps=25),
        generations=3,
        out_dir=str(tmp_path / name),
        eval_every=2,
        eval_episodes=4,
        seed=0,
    )
    settings.update(overrides)
    return TrainRun(**settings)


def test_train_smoke_writes_metrics_and_checkpoints(tmp_path):
    result = train(smoke_run(tmp_path), workers=1)
    assert result.generations_run == 3
    lines = Path(result.metrics_path).read_text().splitlines()
    assert len(lines) == 4  # header + 3 generations
    header = lines[0].split("\t")
    assert header[0] == "generation" and "eval_mean" in header
    eval_cells = [line.split("\t")[6] for line in lines[1:]]
    assert eval_cells[0] == "" and eval_cells[1] != "" and eval_cells[2] == ""
    assert os.path.exists(result.optimizer_path)
    values, cfg, header_js = load_genome(result.genome_path)
    assert cfg == SMALL
    assert header_js["env"]["name"] == "dodge"
    assert np.isfinite(result.best_fitness)


def test_train_resume_reproduces_unbroken_run(tmp_path):
    full = train(smoke_run(tmp_path, "full", generations=5), workers=1)

    part_run = smoke_run(tmp_path, "part", generations=3)
    train(part_run, workers=1)
    resumed = train(
        smoke_run(tmp_path, "part", generations=5), workers=1, resume=True
    )
    assert resumed.generations_run == 5
    full_rows = Path(full.metrics_path).read_text()
    part_rows = Path(resumed.metrics_path).read_text()
    assert full_rows == part_rows
    a = np.load(full.optimizer_path)
    b = np.load(resumed.optimizer_path)
    np.testing.assert_array_equal(a["mean"], b["mean"])
    np.testing.assert_array_equal(a["cov"], b["cov"])
    assert Path(full.genome_path).read_bytes() == Path(resumed.genome_path).read_bytes()


def test_train_resume_refuses_layout_mismatch(tmp_path):
    run = smoke_run(tmp_path, "mismatch")
    train(run, workers=1)
    other_config = AgentConfig(
        action=ActionSpec("discrete", 3),
        input_size=32, window=5, stride=4, embed_dim=3, top_k=4, hidden_size=4,
    )
    with pytest.raises(CodecError):
        train(smoke_run(tmp_path, "mismatch", config=other_config, generations=5),
              workers=1, resume=True)


def test_train_workers_do_not_change_metrics(tmp_path):
    r1 = train(smoke_run(tmp_path, "w1"), workers=1)
    r2 = train(smoke_run(tmp_path, "w2"), workers=2)
    assert Path(r1.metrics_path).read_text() == Path(r2.metrics_path).read_text()


def test_generalization_suite_rows_and_transparency(tmp_path):
    g = np.zeros(build_layout(SMALL).total)  # constant-action probe
    rows = generalization_suite(
        g, SMALL, DODGE32, ["floor_texture", "hover_text", "higher_walls"],
        episodes=3, run_seed=0, workers=1, max_steps=30,
    )
    assert [r.label for r in rows] == ["original", "floor_texture", "hover_text", "higher_walls"]
    base = rows[0]
    for row in rows[1:]:
        assert row.mean == base.mean and row.std == base.std
    table = format_suite_table(rows)
    assert table.startswith("label\tmean")
    assert len(table.strip().split("\n")) == 5


def test_generalization_suite_incompatible_mod_reported_not_fatal():
    g = np.zeros(build_layout(SMALL).total)
    rows = generalization_suite(
        g, SMALL, DODGE32, ["vertical_bars"], episodes=2, run_seed=0, max_steps=10,
    )
    assert rows[1].error is not None
    assert np.isnan(rows[1].mean)


def test_generalization_suite_empty_mods():
    g = np.zeros(build_layout(SMALL).total)
    rows = generalization_suite(g, SMALL, DODGE32, [], episodes=2, run_seed=0, max_steps=10)
    assert len(rows) == 1 and rows[0].label == "original"


def traced_episodes(genome, episodes=2, max_steps=12):
    def provider():
        for ep in range(episodes):
            _, trace = rollout_episode(
                genome, SMALL, DODGE32.make(), derive_seed(0, "analyze", ep),
                max_steps=max_steps, want_trace=True,
                keep_frames=True, keep_importance=True,
            )
            yield trace
    return provider


def test_importance_analysis_zero_genome_single_bin():
    g = np.zeros(build_layout(SMALL).total)
    report = importance_analysis(traced_episodes(g), SMALL.grid, samples_per_range=4)
    assert report.histogram_counts.shape == (1,)
    assert report.histogram_counts[0] == report.steps * SMALL.grid.count
    assert report.histogram_edges[0] == pytest.approx(1.0)


def test_importance_analysis_trained_genome_ranges():
    report = importance_analysis(
        traced_episodes(small_genome(6)), SMALL.grid, samples_per_range=5
    )
    assert report.episodes == 2
    assert report.histogram_counts.sum() > 0
    for spec in report.ranges:
        assert len(spec.patches) <= 5
        for patch in spec.patches:
            assert patch.shape == (SMALL.window, SMALL.window, 3)
        for v in spec.importances:
            assert spec.values[0] - 1e-9 <= v <= spec.values[1] + 1e-9


def test_full_scale_pipeline_one_generation(tmp_path):
    # Default-size agent (3,667 trainables, 529 patches) through the whole
    # loop once: ask, rollouts on the driving task, tell, checkpoints.
    full = AgentConfig(action=ActionSpec("continuous", 3, ((-1.0, 1.0), (0.0, 1.0), (0.0, 1.0))))
    assert build_layout(full).total == 3667
    run = TrainRun(
        config=full,
        optimizer=CmaConfig(population=4, sigma0=0.1, seed=0),
        plan=RolloutPlan(env=EnvSource(name="lane_racer", size=96), rollouts=1, max_steps=4),
        generations=1,
        out_dir=str(tmp_path / "full-scale"),
        eval_every=0,
        eval_episodes=0,
        seed=0,
    )
    result = train(run, workers=1)
    assert result.generations_run == 1
    values, config, header = load_genome(result.genome_path)
    assert values.shape == (3667,)
    assert config == full
    assert header["env"]["name"] == "lane_racer"


def test_importance_analysis_requires_retained_data():
    def provider():
        yield EpisodeTrace(
            selected=np.zeros((1, 4), np.int32),
            selected_importance=np.zeros((1, 4)),
            actions=np.zeros(1, np.int64),
            rewards=np.zeros(1),
            score=0.0,
        )
    with pytest.raises(EmptyReportError):
        importance_analysis(provider, SMALL.grid)
    with pytest.raises(EmptyReportError):
        importance_analysis(lambda: iter(()), SMALL.grid)


def test_dead_bridge_yields_nan_fitness_not_crash():
    import sys

    # an adapter that exits immediately: connect fails, fitness is NaN
    dead = EnvSource(bridge=f"cmd:{sys.executable} -c 'raise SystemExit(1)'")
    plan = RolloutPlan(env=dead, rollouts=2)
    fitness = evaluate_fitness(small_genome(0), SMALL, plan, 0, 1)
    assert np.isnan(fitness)
    # and the cache holds no corpse for the next attempt
    from patchvote.harness import _ENV_CACHE

    assert repr(dead) not in _ENV_CACHE


def test_bridged_rollouts_through_pool_match_builtin():
    import sys

    endpoint = (
        f"cmd:{sys.executable} -m patchvote.bridge --env dodge --size 32 --max-steps 20"
    )
    bridged = EnvSource(bridge=endpoint)
    g = small_genome(1)
    with RolloutPool(1) as pool:
        over_bridge = evaluate_episodes(g, SMALL, bridged, 3, 0, pool, max_steps=20)
    with RolloutPool(1) as pool:
        direct = evaluate_episodes(
            g, SMALL, EnvSource(name="dodge", size=32, max_steps=20), 3, 0, pool,
            max_steps=20,
        )
    np.testing.assert_array_equal(over_bridge, direct)
