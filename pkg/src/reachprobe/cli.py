"""Command-line entry point.

Subcommands: `run` a single exploration and write its report directory,
`ablate` to sweep the standard heuristic/threshold/power grid over four
seeds and aggregate the results, `render` to regenerate a map from an
existing report directory, and `worlds` to list the built-in worlds.
"""

from __future__ import annotations

import json
import os
import statistics
import sys

import click
import numpy as np

from .environment import WORLD_NAMES, build_world
from .explorer import (
    GOAL_GUIDED,
    HEURISTIC_KINDS,
    VISITATION,
    ExplorerConfig,
    ResetHeuristic,
    run as run_exploration,
)
from .navmesh import GoalSet, sample_goals
from .report import (
    CONFIG_FILE,
    MAP_FILE,
    POINTS_FILE,
    parse_points_csv,
    render_svg,
    write_report,
)

OUT_ROOT_ENV = "REACHPROBE_OUT_ROOT"

_CONFIG_KEYS = {
    "world": str,
    "world_seed": int,
    "total_timesteps": int,
    "reset_interval": int,
    "threshold_k": float,
    "num_agents": int,
    "goal_spacing": float,
    "heuristic": str,
    "power": float,
    "mix_weight": float,
    "seed": int,
    "out": str,
}

_DEFAULTS = {
    "world": "small_analog",
    "world_seed": 0,
    "total_timesteps": 100_000,
    "reset_interval": 128,
    "threshold_k": 1.0,
    "num_agents": 16,
    "goal_spacing": 5.0,
    "heuristic": "mixed",
    "power": 1.0,
    "mix_weight": 0.5,
    "seed": 0,
    "out": None,
}


class ConfigError(Exception):
    pass


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    return raw


def resolve_config(document: dict, overrides: dict) -> dict:
    """Merge defaults, config document, then flag overrides, validating keys."""
    merged = dict(_DEFAULTS)
    for source in (document, overrides):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key!r}")
            try:
                merged[key] = _CONFIG_KEYS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    if merged["world"] not in WORLD_NAMES:
        raise ConfigError(f"unknown world: {merged['world']!r}")
    if merged["heuristic"] not in HEURISTIC_KINDS:
        raise ConfigError(f"unknown heuristic: {merged['heuristic']!r}")
    return merged


def explorer_config(resolved: dict) -> ExplorerConfig:
    try:
        heuristic = ResetHeuristic(
            kind=resolved["heuristic"],
            power=resolved["power"],
            mix_weight=resolved["mix_weight"],
        )
        return ExplorerConfig(
            total_timesteps=resolved["total_timesteps"],
            reset_interval=resolved["reset_interval"],
            threshold_k=resolved["threshold_k"],
            num_agents=resolved["num_agents"],
            goal_spacing=resolved["goal_spacing"],
            heuristic=heuristic,
            seed=resolved["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def default_outdir(resolved: dict) -> str:
    root = os.environ.get(OUT_ROOT_ENV, "reachprobe-out")
    name = f"{resolved['world']}_{resolved['heuristic']}_seed{resolved['seed']}"
    return os.path.join(root, name)


_SHARED_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config document; flags override it."),
    click.option("--seed", type=int, default=None),
    click.option("--timesteps", "total_timesteps", type=int, default=None),
    click.option("--agents", "num_agents", type=int, default=None),
    click.option("--heuristic", type=click.Choice(HEURISTIC_KINDS), default=None),
    click.option("--power", type=float, default=None),
    click.option("--mix-weight", "mix_weight", type=float, default=None),
    click.option("--threshold-k", "threshold_k", type=float, default=None),
    click.option("--reset-interval", "reset_interval", type=int, default=None),
    click.option("--goal-spacing", "goal_spacing", type=float, default=None),
    click.option("--world", type=click.Choice(WORLD_NAMES), default=None),
    click.option("--world-seed", "world_seed", type=int, default=None),
    click.option("--out", type=click.Path(), default=None),
    click.option("--single-worker", is_flag=True,
                 help="Run agents round-robin on one thread for byte-identical reruns."),
]


def shared_options(fn):
    for opt in reversed(_SHARED_OPTIONS):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Reachability exploration over built-in simulated worlds."""


@main.command("run")
@shared_options
def cmd_run(config_path, single_worker, **overrides):
    """Run one exploration and write its report directory."""
    try:
        document = load_config_file(config_path) if config_path else {}
        resolved = resolve_config(document, overrides)
        config = explorer_config(resolved)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    outdir = resolved["out"] or default_outdir(resolved)
    try:
        execute_run(resolved, config, outdir, single_worker)
    except Exception as exc:
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)
    click.echo(outdir)


def execute_run(resolved: dict, config: ExplorerConfig, outdir: str, single_worker: bool):
    world = build_world(resolved["world"], resolved["world_seed"])
    report = run_exploration(world, config, concurrent=not single_worker)
    write_report(report, outdir, world.navmesh)
    return report


_ABLATION_GRID = [
    # (label, heuristic kind, threshold K, power p), mirroring the standard sweep
    ("goals_default", GOAL_GUIDED, 1.0, 1.0),
    ("goals_k5", GOAL_GUIDED, 5.0, 1.0),
    ("goals_p05", GOAL_GUIDED, 1.0, 0.5),
    ("goals_p2", GOAL_GUIDED, 1.0, 2.0),
    ("position_default", VISITATION, 1.0, 1.0),
    ("position_k5", VISITATION, 5.0, 1.0),
    ("position_p05", VISITATION, 1.0, 0.5),
    ("position_p2", VISITATION, 1.0, 2.0),
]

ABLATION_SEEDS = 4
ABLATION_TABLE_FILE = "ablation.csv"


def _mean_std(values):
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


@main.command("ablate")
@shared_options
def cmd_ablate(config_path, single_worker, **overrides):
    """Sweep heuristic kind x {default, K=5, p=1/2, p=2} over 4 seeds."""
    try:
        document = load_config_file(config_path) if config_path else {}
        resolved = resolve_config(document, overrides)
        explorer_config(resolved)  # validate base numbers before any run
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    outdir = resolved["out"] or default_outdir(resolved)
    os.makedirs(outdir, exist_ok=True)
    base_seed = resolved["seed"]
    rows = []
    table_path = os.path.join(outdir, ABLATION_TABLE_FILE)
    header = (
        "label,heuristic,threshold_k,power,"
        "timesteps_to_all_goals_mean,timesteps_to_all_goals_std,"
        "positions_found_mean,positions_found_std,unfinished_runs"
    )
    try:
        for label, kind, k, p in _ABLATION_GRID:
            to_all = []
            positions = []
            unfinished = 0
            for i in range(ABLATION_SEEDS):
                sub = dict(
                    resolved,
                    heuristic=kind,
                    threshold_k=k,
                    power=p,
                    seed=base_seed + i,
                )
                config = explorer_config(sub)
                subdir = os.path.join(outdir, label, f"seed{sub['seed']}")
                report = execute_run(sub, config, subdir, single_worker)
                t = report.summary["timesteps_to_all_goals"]
                if t is None:
                    unfinished += 1
                    t = sub["total_timesteps"]
                to_all.append(t)
                positions.append(report.summary["final_unique_positions"])
            tm, ts = _mean_std(to_all)
            pm, ps = _mean_std(positions)
            rows.append(
                f"{label},{kind},{k},{p},{tm:.1f},{ts:.1f},{pm:.1f},{ps:.1f},{unfinished}"
            )
    except Exception as exc:
        with open(table_path, "w") as fh:
            fh.write("\n".join([header] + rows) + "\n")
        click.echo(f"ablation aborted: {exc}", err=True)
        sys.exit(1)
    with open(table_path, "w") as fh:
        fh.write("\n".join([header] + rows) + "\n")
    click.echo(header)
    for row in rows:
        click.echo(row)


@main.command("render")
@click.argument("report_dir", type=click.Path())
def cmd_render(report_dir):
    """Regenerate map.svg from points.csv and config.json in REPORT_DIR."""
    points_path = os.path.join(report_dir, POINTS_FILE)
    config_path = os.path.join(report_dir, CONFIG_FILE)
    try:
        with open(points_path) as fh:
            points = parse_points_csv(fh.read())
        with open(config_path) as fh:
            saved = json.load(fh)
        world = build_world(saved["world"], saved["world_seed"])
        goals = GoalSet(sample_goals(world.navmesh, saved["goal_spacing"]))
    except (OSError, KeyError, ValueError) as exc:
        click.echo(f"cannot render {report_dir}: {exc}", err=True)
        sys.exit(2)
    # Re-derive reached goals from point proximity; reached iff within 1 m.
    coords = np.array([p.position for p in points]) if points else np.empty((0, 3))
    for t, p in enumerate(coords):
        goals.drain(p, t)
    svg = render_svg(world.navmesh, list(goals.goals), points)
    with open(os.path.join(report_dir, MAP_FILE), "w") as fh:
        fh.write(svg)
    click.echo(os.path.join(report_dir, MAP_FILE))


@main.command("worlds")
def cmd_worlds():
    """List built-in worlds and their basic parameters."""
    for name in WORLD_NAMES:
        world = build_world(name, 0)
        b = world.bounds
        click.echo(
            f"{name}: {int(b.xmax - b.xmin)}x{int(b.ymax - b.ymin)} m, "
            f"{len(world.navmesh)} mesh polygons, "
            f"{len(world.seeded_bugs)} seeded bug regions"
        )


if __name__ == "__main__":
    main()
