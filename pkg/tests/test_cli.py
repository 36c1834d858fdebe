import json
import os

import pytest
from click.testing import CliRunner

from reachprobe.cli import main

RUN_ARGS = [
    "run",
    "--world",
    "small_analog",
    "--timesteps",
    "2000",
    "--agents",
    "4",
    "--seed",
    "3",
    "--single-worker",
]


@pytest.fixture
def runner():
    return CliRunner()


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_worlds_lists_builtins(runner):
    res = runner.invoke(main, ["worlds"])
    assert res.exit_code == 0
    for name in ("small_analog", "large_analog", "traversal_analog"):
        assert name in res.output


def test_run_writes_report_dir(runner, tmp_path):
    out = tmp_path / "rep"
    res = runner.invoke(main, RUN_ARGS + ["--out", str(out)])
    assert res.exit_code == 0, res.output
    for name in ("series.csv", "points.csv", "summary.json", "map.svg", "config.json", "series.png"):
        assert (out / name).exists()


def test_run_rerun_byte_identical(runner, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert runner.invoke(main, RUN_ARGS + ["--out", str(a)]).exit_code == 0
    assert runner.invoke(main, RUN_ARGS + ["--out", str(b)]).exit_code == 0
    for name in ("series.csv", "points.csv", "summary.json", "map.svg", "config.json"):
        assert read(a / name) == read(b / name), name


def test_flag_overrides_config_document(runner, tmp_path):
    cfg = tmp_path / "base.json"
    cfg.write_text(json.dumps({"world": "small_analog", "total_timesteps": 2000, "seed": 1, "num_agents": 4}))
    out = tmp_path / "rep"
    res = runner.invoke(
        main,
        ["run", "--config", str(cfg), "--seed", "9", "--single-worker", "--out", str(out)],
    )
    assert res.exit_code == 0, res.output
    with open(out / "config.json") as fh:
        echoed = json.load(fh)
    assert echoed["seed"] == 9
    assert echoed["total_timesteps"] == 2000


def test_malformed_config_exits_2_no_output(runner, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    out = tmp_path / "rep"
    res = runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 2
    assert not out.exists()


def test_unknown_config_key_exits_2(runner, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"total_timestepz": 100}))
    res = runner.invoke(main, ["run", "--config", str(cfg)])
    assert res.exit_code == 2
    assert "unknown config key" in res.output


def test_invalid_values_exit_2(runner, tmp_path):
    res = runner.invoke(main, ["run", "--timesteps", "64", "--reset-interval", "128"])
    assert res.exit_code == 2


def test_out_root_env_used_for_default_dir(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("REACHPROBE_OUT_ROOT", str(tmp_path / "root"))
    monkeypatch.chdir(tmp_path)
    res = runner.invoke(main, RUN_ARGS)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "root" / "small_analog_mixed_seed3" / "series.csv").exists()


def test_render_reproduces_map(runner, tmp_path):
    out = tmp_path / "rep"
    assert runner.invoke(main, RUN_ARGS + ["--out", str(out)]).exit_code == 0
    original = read(out / "map.svg")
    os.remove(out / "map.svg")
    res = runner.invoke(main, ["render", str(out)])
    assert res.exit_code == 0, res.output
    assert read(out / "map.svg") == original


def test_render_empty_dir_exits_2(runner, tmp_path):
    res = runner.invoke(main, ["render", str(tmp_path / "nothing")])
    assert res.exit_code == 2


def test_ablate_single_config_table(runner, tmp_path, monkeypatch):
    # Shrink the grid so the sweep stays fast; full grid is covered by the
    # acceptance suite.
    import reachprobe.cli as cli

    monkeypatch.setattr(cli, "_ABLATION_GRID", cli._ABLATION_GRID[:1])
    out = tmp_path / "abl"
    res = runner.invoke(
        main,
        [
            "ablate",
            "--world",
            "small_analog",
            "--timesteps",
            "2000",
            "--agents",
            "4",
            "--seed",
            "10",
            "--single-worker",
            "--out",
            str(out),
        ],
    )
    assert res.exit_code == 0, res.output
    table = (out / "ablation.csv").read_text().strip().splitlines()
    assert len(table) == 2
    assert table[0].startswith("label,heuristic,threshold_k,power")
    row = table[1].split(",")
    assert row[0] == "goals_default"
    # Per-seed subdirectories with their own reports, seeds base+0..3.
    for seed in range(10, 14):
        assert (out / "goals_default" / f"seed{seed}" / "summary.json").exists()
    # Aggregate mean recomputable from the per-run summaries.
    positions = []
    for seed in range(10, 14):
        with open(out / "goals_default" / f"seed{seed}" / "summary.json") as fh:
            positions.append(json.load(fh)["final_unique_positions"])
    assert float(row[6]) == pytest.approx(sum(positions) / 4, abs=0.051)
