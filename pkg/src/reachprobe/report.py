"""Run metrics, classified point export, and top-down map rendering.

Emits a deterministic report directory: delimited time series and point
cloud, a key-value summary, an SVG map in the style of a top-down debug
view (mesh gray, reached goals green, unreached red, near-mesh points
magenta, off-mesh yellow), and a matplotlib figure of the metric curves.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .geometry import Position
from .navmesh import GoalSet, NavMesh, PointClass

SERIES_FILE = "series.csv"
POINTS_FILE = "points.csv"
SUMMARY_FILE = "summary.json"
MAP_FILE = "map.svg"
CONFIG_FILE = "config.json"
FIGURE_FILE = "series.png"

_COLORS = {
    "mesh": "#b0b0b0",
    "goal_reached": "#1fa11f",
    "goal_unreached": "#d62728",
    PointClass.NEAR_MESH: "#d52bd5",
    PointClass.OFF_MESH: "#e6b800",
}


@dataclass
class SeriesRow:
    timestep: int
    goals_reached: int
    goals_total: int
    unique_positions: int


@dataclass
class ReportPoint:
    id: int
    position: Position
    point_class: str
    visit_count: int
    first_seen: int


@dataclass
class RunReport:
    """Everything a finished run exports."""

    series: list
    points: list
    goals: list  # final Goal states, for map coloring
    summary: dict
    config: dict
    seed: int


class MetricsRecorder:
    """Accumulates the metric time series during a run."""

    def __init__(self, goals: GoalSet, cache):
        self.goals = goals
        self.cache = cache
        self.rows: list = []
        self._sampled: set = set()

    def sample(self, t: int) -> SeriesRow:
        row = SeriesRow(t, self.goals.reached_count, self.goals.total, len(self.cache))
        self.rows.append(row)
        self._sampled.add(t)
        return row

    def sampled_at(self, t: int) -> bool:
        return t in self._sampled


def classify_all(cache, mesh: NavMesh, goals=None) -> list:
    """Label every cached entry by its distance to the mesh."""
    entries = cache.snapshot_entries() if hasattr(cache, "snapshot_entries") else list(cache)
    if not entries:
        return []
    positions = np.array([e.position for e in entries])
    classes = mesh.classify_points(positions)
    return [
        ReportPoint(e.id, e.position, cls, e.visit_count, e.first_seen)
        for e, cls in zip(entries, classes)
    ]


def build_report(world, config, cache, goals: GoalSet, recorder: MetricsRecorder) -> RunReport:
    points = classify_all(cache, world.navmesh, goals)
    series = recorder.rows
    reached = goals.reached_count
    total = goals.total
    to_all = None
    for row in series:
        if row.goals_total and row.goals_reached == row.goals_total:
            to_all = row.timestep
            break
    config_echo = config_to_dict(config, world)
    summary = {
        "timesteps_to_all_goals": to_all,
        "final_goal_pct": (100.0 * reached / total) if total else 100.0,
        "goals_reached": reached,
        "goals_total": total,
        "final_unique_positions": len(cache),
        "seed": config.seed,
        "config": config_echo,
    }
    return RunReport(
        series=series,
        points=points,
        goals=list(goals.goals),
        summary=summary,
        config=config_echo,
        seed=config.seed,
    )


def config_to_dict(config, world=None) -> dict:
    h = config.heuristic
    out = {
        "total_timesteps": config.total_timesteps,
        "reset_interval": config.reset_interval,
        "threshold_k": config.threshold_k,
        "num_agents": config.num_agents,
        "goal_spacing": config.goal_spacing,
        "heuristic": h.kind,
        "power": h.power,
        "mix_weight": h.mix_weight,
        "seed": config.seed,
    }
    if world is not None:
        out["world"] = world.name
        out["world_seed"] = world.seed
    return out


# -- file emission ---------------------------------------------------------


def series_csv(series) -> str:
    lines = ["timestep,goals_reached,goals_total,unique_positions"]
    for r in series:
        lines.append(f"{r.timestep},{r.goals_reached},{r.goals_total},{r.unique_positions}")
    return "\n".join(lines) + "\n"


def points_csv(points) -> str:
    lines = ["id,x,y,z,class,visit_count,first_seen"]
    for p in points:
        x, y, z = p.position
        lines.append(
            f"{p.id},{x:.6f},{y:.6f},{z:.6f},{p.point_class},{p.visit_count},{p.first_seen}"
        )
    return "\n".join(lines) + "\n"


def parse_points_csv(text: str) -> list:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "id,x,y,z,class,visit_count,first_seen":
        raise ValueError("points file missing expected header")
    out = []
    for line in lines[1:]:
        i, x, y, z, cls, vc, fs = line.split(",")
        out.append(ReportPoint(int(i), Position(float(x), float(y), float(z)), cls, int(vc), int(fs)))
    return out


def parse_series_csv(text: str) -> list:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "timestep,goals_reached,goals_total,unique_positions":
        raise ValueError("series file missing expected header")
    return [SeriesRow(*(int(v) for v in line.split(","))) for line in lines[1:]]


def render_topdown(report: RunReport, mesh: NavMesh) -> str:
    """Orthographic top-down SVG of the mesh, goals, and discovered points."""
    return render_svg(mesh, report.goals, report.points)


def render_svg(mesh: NavMesh, goals, points) -> str:
    xs = []
    ys = []
    for poly in mesh.polygons:
        xs.extend(poly.vertices[:, 0])
        ys.extend(poly.vertices[:, 1])
    for p in points:
        xs.append(p.position.x)
        ys.append(p.position.y)
    for g in goals:
        xs.append(g.position.x)
        ys.append(g.position.y)
    if not xs:
        xs = [0.0, 1.0]
        ys = [0.0, 1.0]
    margin = 5.0
    x0, x1 = min(xs) - margin, max(xs) + margin
    y0, y1 = min(ys) - margin, max(ys) + margin
    width = x1 - x0
    height = y1 - y0

    def fx(x):
        return f"{x - x0:.6f}"

    def fy(y):
        # Flip so +y in the world points up on the page.
        return f"{y1 - y:.6f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:.6f} {height:.6f}" '
        f'width="900" height="{900.0 * height / width:.0f}">',
        f'<rect x="0" y="0" width="{width:.6f}" height="{height:.6f}" fill="#ffffff"/>',
    ]
    for poly in mesh.polygons:
        pts = " ".join(f"{fx(v[0])},{fy(v[1])}" for v in poly.vertices)
        parts.append(
            f'<polygon points="{pts}" fill="#e8e8e8" stroke="{_COLORS["mesh"]}" stroke-width="0.15"/>'
        )
    for p in points:
        color = _COLORS.get(p.point_class, "#000000")
        parts.append(
            f'<circle cx="{fx(p.position.x)}" cy="{fy(p.position.y)}" r="0.35" fill="{color}"/>'
        )
    for g in goals:
        color = _COLORS["goal_reached"] if g.reached else _COLORS["goal_unreached"]
        parts.append(
            f'<circle cx="{fx(g.position.x)}" cy="{fy(g.position.y)}" r="0.55" fill="{color}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_series_figure(series, path) -> None:
    """Matplotlib rendering of the goal-coverage and unique-position curves."""
    ts = [r.timestep for r in series]
    pct = [100.0 * r.goals_reached / r.goals_total if r.goals_total else 100.0 for r in series]
    uniq = [r.unique_positions for r in series]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(ts, pct, color="tab:green")
    ax1.set_ylabel("goals reached [%]")
    ax1.set_ylim(0, 105)
    ax1.grid(alpha=0.3)
    ax2.plot(ts, uniq, color="tab:blue")
    ax2.set_ylabel("unique positions")
    ax2.set_xlabel("timesteps")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: RunReport, outdir, mesh: NavMesh) -> None:
    """Write the full report directory (delimited files, summary, map, figure)."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, SERIES_FILE), "w") as fh:
        fh.write(series_csv(report.series))
    with open(os.path.join(outdir, POINTS_FILE), "w") as fh:
        fh.write(points_csv(report.points))
    with open(os.path.join(outdir, SUMMARY_FILE), "w") as fh:
        fh.write(json.dumps(report.summary, indent=2, sort_keys=True) + "\n")
    with open(os.path.join(outdir, CONFIG_FILE), "w") as fh:
        fh.write(json.dumps(report.config, indent=2, sort_keys=True) + "\n")
    with open(os.path.join(outdir, MAP_FILE), "w") as fh:
        fh.write(render_topdown(report, mesh))
    render_series_figure(report.series, os.path.join(outdir, FIGURE_FILE))
