import json
import os

import numpy as np
import pytest

from reachprobe.environment import build_world
from reachprobe.explorer import ExplorerConfig, run
from reachprobe.geometry import Position
from reachprobe.navmesh import GoalSet, PointClass, sample_goals
from reachprobe.report import (
    MetricsRecorder,
    ReportPoint,
    classify_all,
    parse_points_csv,
    parse_series_csv,
    points_csv,
    render_svg,
    render_topdown,
    series_csv,
    write_report,
)
from reachprobe.spatial_cache import SpatialIndex


@pytest.fixture(scope="module")
def small_world():
    return build_world("small_analog", 0)


@pytest.fixture(scope="module")
def small_report(small_world):
    cfg = ExplorerConfig(total_timesteps=6000, seed=4)
    return run(small_world, cfg)


# -- metrics recorder ------------------------------------------------------


def test_recorder_initial_row_counts_spawn_inserts(small_world):
    goals = GoalSet(sample_goals(small_world.navmesh, 5.0))
    cache = SpatialIndex(1.0)
    cache.insert_if_novel(small_world.spawn, b"ck", 0)
    rec = MetricsRecorder(goals, cache)
    row = rec.sample(0)
    assert row.timestep == 0
    assert row.unique_positions == 1
    assert row.goals_reached == 0
    assert rec.sampled_at(0) and not rec.sampled_at(1000)


# -- classify_all ----------------------------------------------------------


def test_classify_far_point_off_mesh(small_world):
    cache = SpatialIndex(1.0)
    surface = small_world.spawn
    cache.insert_if_novel(surface, b"a", 0)
    cache.insert_if_novel(Position(surface.x, surface.y, surface.z + 10.0), b"b", 1)
    points = classify_all(cache, small_world.navmesh)
    classes = {p.id: p.point_class for p in points}
    assert classes[0] == PointClass.NEAR_MESH
    assert classes[1] == PointClass.OFF_MESH


def test_classify_all_unique_single_class(small_report):
    ids = [p.id for p in small_report.points]
    assert len(ids) == len(set(ids))
    assert all(
        p.point_class in (PointClass.NEAR_MESH, PointClass.OFF_MESH)
        for p in small_report.points
    )


# -- summary self-consistency ----------------------------------------------


def test_summary_matches_series_and_points(small_report):
    s = small_report.summary
    assert s["final_unique_positions"] == len(small_report.points)
    last = small_report.series[-1]
    assert s["goals_reached"] == last.goals_reached
    assert s["goals_total"] == last.goals_total
    to_all = next(
        (r.timestep for r in small_report.series if r.goals_reached == r.goals_total),
        None,
    )
    assert s["timesteps_to_all_goals"] == to_all


def test_series_invariants(small_report):
    ts = [r.timestep for r in small_report.series]
    assert ts == sorted(set(ts))
    uniq = [r.unique_positions for r in small_report.series]
    assert uniq == sorted(uniq)
    assert all(r.goals_reached <= r.goals_total for r in small_report.series)


# -- delimited round-trips -------------------------------------------------


def test_series_csv_roundtrip(small_report):
    text = series_csv(small_report.series)
    assert parse_series_csv(text) == small_report.series


def test_points_csv_roundtrip_six_decimals(small_report):
    text = points_csv(small_report.points)
    body = text.splitlines()[1]
    for cell in body.split(",")[1:4]:
        whole, frac = cell.split(".")
        assert len(frac) == 6
    parsed = parse_points_csv(text)
    assert len(parsed) == len(small_report.points)
    for a, b in zip(parsed, small_report.points):
        assert a.id == b.id and a.point_class == b.point_class
        assert a.position == pytest.approx(b.position, abs=1e-6)


def test_parsers_reject_bad_header():
    with pytest.raises(ValueError):
        parse_series_csv("nope\n1,2,3,4\n")
    with pytest.raises(ValueError):
        parse_points_csv("nope\n")


# -- SVG rendering ---------------------------------------------------------


def test_render_deterministic(small_report, small_world):
    a = render_topdown(small_report, small_world.navmesh)
    b = render_topdown(small_report, small_world.navmesh)
    assert a == b


def test_render_empty_report_mesh_only(small_world):
    svg = render_svg(small_world.navmesh, [], [])
    assert svg.count("<polygon") == len(small_world.navmesh)
    assert "<circle" not in svg


def test_render_colors_by_class_and_status(small_world):
    goals = GoalSet(sample_goals(small_world.navmesh, 5.0))
    goals.goals[0].reached_at = 7
    points = [
        ReportPoint(0, small_world.spawn, PointClass.NEAR_MESH, 1, 0),
        ReportPoint(1, Position(10, 10, 40), PointClass.OFF_MESH, 2, 5),
    ]
    svg = render_svg(small_world.navmesh, goals.goals, points)
    assert '"#1fa11f"' in svg  # reached goal
    assert '"#d62728"' in svg  # unreached goal
    assert '"#d52bd5"' in svg  # near-mesh point
    assert '"#e6b800"' in svg  # off-mesh point


# -- full directory --------------------------------------------------------


def test_write_report_directory(tmp_path, small_report, small_world):
    out = tmp_path / "rep"
    write_report(small_report, out, small_world.navmesh)
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "config.json",
        "map.svg",
        "points.csv",
        "series.csv",
        "series.png",
        "summary.json",
    ]
    with open(out / "summary.json") as fh:
        summary = json.load(fh)
    assert summary["final_unique_positions"] == len(small_report.points)
    assert (out / "series.png").stat().st_size > 1000
    with open(out / "config.json") as fh:
        cfg = json.load(fh)
    assert cfg["world"] == "small_analog"
    assert cfg["seed"] == 4
