"""Acceptance suite: one test per release criterion, in a fixed order.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. The toy-training criterion is last; it trains until the evolved
agent doubles the measured random baseline and is the only long test here.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from patchvote.attention import (
    AttentionParams,
    attention_matrix,
    importance_vector,
    weighted_output,
)
from patchvote.cli import main as cli_main
from patchvote.cmaes import CmaConfig, CmaEs
from patchvote.controller import ActionSpec, LstmParams, reset_controller, step_controller
from patchvote.envs import EnvModification, apply_modification, make_env, random_baseline
from patchvote.envs.baseline import random_action
from patchvote.genome import AgentConfig, build_layout, count_params, decode, encode, load_genome, save_genome
from patchvote.harness import EnvSource, RolloutPlan, TrainRun, rollout_episode, train
from patchvote.imaging import read_ppm
from patchvote.patches import PatchGrid
from patchvote.seeding import derive_seed

from oracles import loop_attention, loop_lstm_step, loop_matmul

FULL_CONFIG = AgentConfig(
    action=ActionSpec("continuous", 3, ((-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)))
)

TOY_CONFIG = AgentConfig(
    action=ActionSpec("discrete", 3),
    input_size=48, window=5, stride=4, embed_dim=4, top_k=5, hidden_size=8,
)


def report(line: str) -> None:
    print(f"\nACCEPTANCE PASS: {line}")


def test_c01_parameter_parity():
    counts = count_params(FULL_CONFIG)
    assert counts == {"query": 592, "key": 592, "lstm": 2483, "total": 3667}
    report("parameter parity: {592, 592, 2483, 3667} exactly")


def test_c02_grid_parity():
    grid = PatchGrid(96, 7, 4)
    assert grid.count == 529
    assert grid.patch_len == 147
    report("grid parity: 529 patches of flattened length 147")


def test_c03_attention_invariants_1000_instances():
    rng = np.random.Generator(np.random.PCG64(2024))
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        d_in = int(rng.integers(1, 17))
        d = int(rng.integers(1, 5))
        x = rng.standard_normal((n, d_in))
        params = AttentionParams(
            w_query=rng.standard_normal((d_in, d)),
            b_query=rng.standard_normal(d),
            w_key=rng.standard_normal((d_in, d)),
            b_key=rng.standard_normal(d),
        )
        a = attention_matrix(x, params)
        assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-6
        assert abs(importance_vector(a).sum() - n) < 1e-4
        want_a = loop_attention(
            x.tolist(), params.w_query.tolist(), params.b_query.tolist(),
            params.w_key.tolist(), params.b_key.tolist(),
        )
        assert np.abs(a - want_a).max() < 1e-10
        y = weighted_output(a, x)
        assert np.abs(y - loop_matmul(a.tolist(), x.tolist())).max() < 1e-10
    report("attention invariants on 1000 random instances (row sums 1e-6, votes 1e-4, oracles 1e-10)")


def test_c04_lstm_oracle():
    rng = np.random.Generator(np.random.PCG64(4096))
    for _ in range(100):
        hidden = int(rng.integers(1, 8))
        in_dim = int(rng.integers(1, 9))
        act_dim = int(rng.integers(1, 4))
        params = LstmParams(
            w_input=rng.standard_normal((4 * hidden, in_dim)),
            w_hidden=rng.standard_normal((4 * hidden, hidden)),
            b_input=rng.standard_normal(4 * hidden),
            b_hidden=rng.standard_normal(4 * hidden),
            w_out=rng.standard_normal((act_dim, hidden)),
            b_out=rng.standard_normal(act_dim),
        )
        state = reset_controller(hidden)
        state.h = rng.standard_normal(hidden)
        state.c = rng.standard_normal(hidden)
        features = rng.standard_normal(in_dim)
        _, new = step_controller(features, state, params, ActionSpec("discrete", act_dim))
        want_h, want_c, _ = loop_lstm_step(
            features.tolist(), state.h.tolist(), state.c.tolist(),
            params.w_input.tolist(), params.w_hidden.tolist(),
            params.b_input.tolist(), params.b_hidden.tolist(),
            params.w_out.tolist(), params.b_out.tolist(),
        )
        assert np.abs(new.h - want_h).max() < 1e-12
        assert np.abs(new.c - want_c).max() < 1e-12

    zero = LstmParams(
        w_input=np.zeros((4 * 3, 2)), w_hidden=np.zeros((4 * 3, 3)),
        b_input=np.zeros(12), b_hidden=np.zeros(12),
        w_out=np.zeros((3, 3)), b_out=np.zeros(3),
    )
    spec = ActionSpec("continuous", 3, ((-2.0, 4.0), (0.0, 1.0), (-1.0, 1.0)))
    action, state = step_controller(np.ones(2), reset_controller(3), zero, spec)
    assert (state.h == 0).all() and (state.c == 0).all()
    np.testing.assert_allclose(action, [1.0, 0.5, 0.0], atol=1e-15)
    disc, _ = step_controller(np.ones(2), reset_controller(3), zero, ActionSpec("discrete", 3))
    assert disc == 0
    report("LSTM matches scalar-loop oracle (1e-12); zero-parameter case exact")


def test_c05_codec_round_trip(tmp_path):
    rng = np.random.Generator(np.random.PCG64(55))
    total = build_layout(FULL_CONFIG).total
    for _ in range(100):
        g = rng.standard_normal(total)
        attn, lstm = decode(g, FULL_CONFIG)
        assert np.array_equal(encode(attn, lstm, FULL_CONFIG), g)
    g = rng.standard_normal(total)
    path = str(tmp_path / "roundtrip.genome")
    save_genome(path, g, FULL_CONFIG, env={"name": "lane_racer"}, fitness=1.25)
    values, config, _ = load_genome(path)
    assert values.tobytes() == g.tobytes()
    assert config == FULL_CONFIG
    report("codec: encode/decode identity on 100 genomes; checkpoint bit-identical")


def test_c06_cmaes_convergence():
    def sphere(x):
        return float(np.sum(x * x))

    es = CmaEs(np.full(10, 0.5), CmaConfig(16, sigma0=0.3, seed=1))
    evals = 0
    while evals < 20_000:
        xs = es.ask()
        evals += len(xs)
        es.tell(xs, -np.array([sphere(x) for x in xs]))
        if -es.best()[1] < 1e-10:
            break
    assert -es.best()[1] < 1e-10 and evals <= 20_000

    def rosenbrock(x):
        return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))

    es = CmaEs(np.zeros(5), CmaConfig(32, sigma0=0.3, seed=3))
    r_evals = 0
    while r_evals < 100_000:
        xs = es.ask()
        r_evals += len(xs)
        es.tell(xs, -np.array([rosenbrock(x) for x in xs]))
        if -es.best()[1] < 1e-6:
            break
    assert -es.best()[1] < 1e-6 and r_evals <= 100_000

    a = CmaEs(np.zeros(6), CmaConfig(12, sigma0=0.5, seed=4))
    b = CmaEs(np.zeros(6), CmaConfig(12, sigma0=0.5, seed=4))
    rng = np.random.Generator(np.random.PCG64(9))
    for _ in range(5):
        xs_a, xs_b = a.ask(), b.ask()
        f = rng.standard_normal(12)
        a.tell(xs_a, f)
        b.tell(xs_b, 3.0 * f - 11.0)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov) and a.sigma == b.sigma
    report(
        f"optimizer: sphere 1e-10 in {evals} evals (<=20k), "
        f"rosenbrock 1e-6 in {r_evals} evals (<=100k), rank invariance exact"
    )


def test_c07_modification_transparency():
    pairs = {
        "lane_racer": ("color_perturb", "vertical_bars", "background_blob"),
        "dodge": ("higher_walls", "floor_texture", "hover_text"),
    }
    for env_name, kinds in pairs.items():
        for kind in kinds:
            for rep in range(20):
                seed = derive_seed(7, "transparency", rep)
                rng = np.random.default_rng(rep)
                probe = make_env(env_name, size=48)
                actions = [random_action(probe.spec.action, rng) for _ in range(60)]

                def rewards(env):
                    env.reset(seed)
                    out = []
                    for act in actions:
                        step = env.step(act)
                        out.append(step.reward)
                        if step.done:
                            break
                    return out

                plain = rewards(make_env(env_name, size=48))
                modded = rewards(
                    apply_modification(make_env(env_name, size=48), EnvModification(kind))
                )
                assert plain == modded, (env_name, kind, rep)
    report("modification transparency: 20 fixed-action replays bit-identical for all 6 kinds")


SMOKE_YAML = """\
schema_version: 1
agent: {{input_size: 32, window: 5, stride: 4, embed_dim: 2, top_k: 4, hidden_size: 4}}
env: {{name: dodge, size: 32, max_steps: 40}}
optimizer: {{population: 8, sigma0: 0.1}}
rollout: {{episodes: 2, max_steps: 20}}
training: {{generations: 3, eval_every: 3, eval_episodes: 2, seed: 0}}
output: {{dir: {out}}}
"""


def test_c08_determinism_and_schedule_independence(tmp_path):
    config_path = tmp_path / "smoke.yaml"

    def run_with_workers(workers: int, name: str) -> str:
        out_dir = tmp_path / name
        config_path.write_text(SMOKE_YAML.format(out=out_dir))
        code = cli_main([
            "train", "--config", str(config_path), "--workers", str(workers),
        ])
        assert code == 0
        return (out_dir / "metrics.tsv").read_text()

    metrics_1 = run_with_workers(1, "w1")
    metrics_8 = run_with_workers(8, "w8")
    assert metrics_1 == metrics_8

    small = AgentConfig(
        action=ActionSpec("discrete", 3),
        input_size=32, window=5, stride=4, embed_dim=2, top_k=4, hidden_size=4,
    )

    def make_run(name, generations):
        return TrainRun(
            config=small,
            optimizer=CmaConfig(population=8, sigma0=0.1, seed=0),
            plan=RolloutPlan(env=EnvSource(name="dodge", size=32, max_steps=40),
                             rollouts=2, max_steps=20),
            generations=generations,
            out_dir=str(tmp_path / name),
            eval_every=3,
            eval_episodes=2,
            seed=0,
        )

    unbroken = train(make_run("unbroken", 6), workers=1)
    train(make_run("resumed", 3), workers=1)
    resumed = train(make_run("resumed", 6), workers=1, resume=True)
    assert Path(unbroken.metrics_path).read_text() == Path(resumed.metrics_path).read_text()
    a = np.load(unbroken.optimizer_path)
    b = np.load(resumed.optimizer_path)
    for key in ("mean", "cov", "path_sigma", "path_cov"):
        assert np.array_equal(a[key], b[key])
    assert Path(unbroken.genome_path).read_bytes() == Path(resumed.genome_path).read_bytes()
    report("determinism: metrics identical at workers 1 and 8; resume bit-for-bit")


def test_c09_visualization_contract(tmp_path):
    config = AgentConfig(
        action=ActionSpec("discrete", 3),
        input_size=32, window=5, stride=4, embed_dim=2, top_k=10, hidden_size=4,
    )
    values = np.zeros(build_layout(config).total)
    checkpoint = str(tmp_path / "zero.genome")
    save_genome(checkpoint, values, config, env={"name": "dodge", "size": 32, "max_steps": 12})
    out_dir = tmp_path / "overlays"
    assert cli_main([
        "viz", "--checkpoint", checkpoint, "--seed", "3",
        "--out", str(out_dir), "--max-steps", "10",
    ]) == 0

    env = make_env("dodge", size=32, max_steps=12)
    _, trace = rollout_episode(values, config, env, derive_seed(3, "viz", 0),
                               max_steps=10, want_trace=True, keep_frames=True)
    frames = sorted(out_dir.glob("step_*.ppm"))
    assert len(frames) == len(trace)  # one overlay per step

    # zero genome: uniform importance, so the tie rule selects patches 0..K-1
    for t in range(len(trace)):
        assert trace.selected[t].tolist() == list(range(10))
        assert np.allclose(trace.selected_importance[t], 1.0, atol=1e-9)

    # overlay pixels whiten exactly the traced patch windows
    grid = config.grid
    overlay = read_ppm(str(frames[0])).astype(np.float64) / 255.0
    raw = trace.frames[0].astype(np.float64) / 255.0
    mask = np.zeros((32, 32), dtype=bool)
    for index in trace.selected[0]:
        r, c = divmod(int(index), grid.cols)
        mask[r * grid.stride : r * grid.stride + grid.window,
             c * grid.stride : c * grid.stride + grid.window] = True
    np.testing.assert_allclose(overlay[mask], 1.0, atol=1 / 255)
    np.testing.assert_allclose(overlay[~mask], raw[~mask], atol=1 / 255)
    report("visualization: one overlay per step; overlays match traced windows; tie rule uniform")


def test_c10_toy_training_doubles_random_baseline(tmp_path):
    # Baseline measured first (fixed seeds), then evolution must reach twice
    # that mean on 100 held-out episodes within 300 generations.
    baseline = random_baseline(
        make_env("dodge", size=48, max_steps=2100), episodes=100, seed=0, max_steps=500
    )
    target = 2.0 * baseline.mean
    run = TrainRun(
        config=TOY_CONFIG,
        optimizer=CmaConfig(population=64, sigma0=0.2, seed=0),
        plan=RolloutPlan(env=EnvSource(name="dodge", size=48, max_steps=2100),
                         rollouts=5, max_steps=500),
        generations=300,
        out_dir=str(tmp_path / "toy"),
        eval_every=5,
        eval_episodes=100,
        seed=0,
        target_score=target,
    )
    workers = min(8, os.cpu_count() or 1)
    result = train(run, workers=workers)
    assert result.eval_mean is not None
    assert result.eval_mean >= target, (
        f"eval mean {result.eval_mean:.1f} did not reach 2x baseline "
        f"{baseline.mean:.1f} within {result.generations_run} generations"
    )
    report(
        f"toy training: eval mean {result.eval_mean:.1f} >= 2x baseline "
        f"({baseline.mean:.1f}) after {result.generations_run} generations"
    )
