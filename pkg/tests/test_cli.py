import os
from pathlib import Path

import numpy as np
import pytest

from patchvote.cli import main
from patchvote.controller import ActionSpec
from patchvote.genome import AgentConfig, build_layout, save_genome

SMOKE_YAML = """\
schema_version: 1
agent:
  input_size: 32
  window: 5
  stride: 4
  embed_dim: 2
  top_k: 4
  hidden_size: 4
env:
  name: dodge
  size: 32
  max_steps: 40
optimizer:
  population: 6
  sigma0: 0.1
rollout:
  episodes: 1
  max_steps: 20
training:
  generations: 2
  eval_every: 2
  eval_episodes: 2
  seed: 0
output:
  dir: {out}
"""


def write_config(tmp_path, name="run.yaml", out="train-out") -> str:
    path = tmp_path / name
    path.write_text(SMOKE_YAML.format(out=tmp_path / out))
    return str(path)


def write_checkpoint(tmp_path) -> str:
    config = AgentConfig(
        action=ActionSpec("discrete", 3),
        input_size=32, window=5, stride=4, embed_dim=2, top_k=4, hidden_size=4,
    )
    rng = np.random.Generator(np.random.PCG64(5))
    values = rng.standard_normal(build_layout(config).total) * 0.2
    path = str(tmp_path / "agent.genome")
    save_genome(path, values, config, env={"name": "dodge", "size": 32, "max_steps": 40})
    return path


def test_missing_config_exits_2(capsys):
    assert main(["train", "--config", "missing.yaml"]) == 2
    assert "no such file" in capsys.readouterr().err


def test_invalid_config_exits_2_naming_key(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(SMOKE_YAML.format(out=tmp_path / "o") + "\nwarp_drive: on\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "warp_drive" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["train"])  # --config is required
    assert excinfo.value.code == 2


def test_train_smoke_and_eval_and_gen(tmp_path, capsys):
    config_path = write_config(tmp_path)
    assert main(["train", "--config", config_path]) == 0
    out = capsys.readouterr()
    metrics_path = out.out.strip()
    assert os.path.exists(metrics_path)
    assert "done: 2 generations" in out.err
    # per-generation progress rows were mirrored to stderr
    assert "generation" in out.err

    checkpoint = str(Path(metrics_path).parent / "best.genome")
    assert os.path.exists(checkpoint)

    assert main(["eval", "--checkpoint", checkpoint, "--episodes", "3",
                 "--max-steps", "15", "--out", str(tmp_path / "eval")]) == 0
    eval_out = capsys.readouterr().out
    assert "±" in eval_out and "3 episodes" in eval_out
    assert (tmp_path / "eval" / "evaluation.tsv").exists()

    assert main(["gen", "--checkpoint", checkpoint, "--episodes", "2",
                 "--max-steps", "10", "--mods", "floor_texture"]) == 0
    table = capsys.readouterr().out
    assert table.startswith("label\t")
    assert "original" in table and "floor_texture" in table


def test_eval_output_stable_across_invocations(tmp_path, capsys):
    checkpoint = write_checkpoint(tmp_path)
    args = ["eval", "--checkpoint", checkpoint, "--episodes", "2",
            "--seed", "4", "--max-steps", "12"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_eval_missing_checkpoint_exits_2(capsys):
    assert main(["eval", "--checkpoint", "ghost.genome"]) == 2


def test_viz_writes_one_overlay_per_step(tmp_path, capsys):
    checkpoint = write_checkpoint(tmp_path)
    out_dir = tmp_path / "frames"
    assert main(["viz", "--checkpoint", checkpoint, "--seed", "1",
                 "--out", str(out_dir), "--max-steps", "5"]) == 0
    ppms = sorted(out_dir.glob("step_*.ppm"))
    log = (out_dir / "episode.tsv").read_text().splitlines()
    assert len(ppms) == len(log) - 1  # header plus one row per step
    assert len(ppms) >= 1


def test_analyze_writes_report(tmp_path, capsys):
    checkpoint = write_checkpoint(tmp_path)
    out_dir = tmp_path / "analysis"
    assert main(["analyze", "--checkpoint", checkpoint, "--episodes", "2",
                 "--out", str(out_dir), "--max-steps", "8"]) == 0
    assert (out_dir / "histogram.tsv").exists()
    assert (out_dir / "exemplars.tsv").exists()
    assert "top-quantile floor" in capsys.readouterr().out


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    text = capsys.readouterr().out
    for token in ("train", "eval", "viz", "gen", "analyze", "serve"):
        assert token in text


def test_train_resume_extends_run(tmp_path, capsys):
    config_path = tmp_path / "resumable.yaml"
    out_dir = tmp_path / "resumable-out"
    config_path.write_text(SMOKE_YAML.format(out=out_dir))
    assert main(["train", "--config", str(config_path)]) == 0
    capsys.readouterr()
    # raise the budget and continue the same run
    config_path.write_text(
        SMOKE_YAML.format(out=out_dir).replace("generations: 2", "generations: 4")
    )
    assert main(["train", "--config", str(config_path), "--resume"]) == 0
    capsys.readouterr()
    rows = (out_dir / "metrics.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3", "4"]
