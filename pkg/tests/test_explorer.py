import math
from collections import Counter

import numpy as np
import pytest

from reachprobe.environment import build_world
from reachprobe.explorer import (
    GOAL_GUIDED,
    MIXED,
    START_ONLY,
    UNIFORM,
    VISITATION,
    ExplorerConfig,
    ResetHeuristic,
    priorities,
    priority,
    random_action,
    run,
    select_reset,
)
from reachprobe.geometry import Position
from reachprobe.navmesh import Goal
from reachprobe.spatial_cache import EntryView


@pytest.fixture(scope="module")
def small_world():
    return build_world("small_analog", 0)


def entry(pos=(0, 0, 0), visits=1):
    return EntryView(0, Position(*pos), visits, 0)


# -- config validation -----------------------------------------------------


def test_heuristic_validation():
    with pytest.raises(ValueError):
        ResetHeuristic(kind="sideways")
    with pytest.raises(ValueError):
        ResetHeuristic(power=0)
    with pytest.raises(ValueError):
        ResetHeuristic(mix_weight=1.5)


def test_config_validation():
    with pytest.raises(ValueError):
        ExplorerConfig(total_timesteps=0)
    with pytest.raises(ValueError):
        ExplorerConfig(total_timesteps=100, reset_interval=128)
    with pytest.raises(ValueError):
        ExplorerConfig(total_timesteps=100, num_agents=0)
    with pytest.raises(ValueError):
        ExplorerConfig(total_timesteps=100, threshold_k=-1)


# -- priority --------------------------------------------------------------


def test_priority_visitation():
    assert priority(entry(visits=4), [], ResetHeuristic(VISITATION)) == pytest.approx(0.25)


def test_priority_goal_guided():
    goals = [Goal(Position(10, 0, 0))]
    assert priority(entry(), goals, ResetHeuristic(GOAL_GUIDED)) == pytest.approx(0.1)


def test_priority_goal_guided_clamped():
    goals = [Goal(Position(0.3, 0, 0))]
    assert priority(entry(), goals, ResetHeuristic(GOAL_GUIDED)) == pytest.approx(1.0)


def test_priority_goal_guided_all_reached_uniform():
    goals = [Goal(Position(5, 0, 0), reached_at=3)]
    dists = np.array([math.inf, math.inf])
    p = priorities(np.array([1.0, 7.0]), dists, ResetHeuristic(GOAL_GUIDED))
    assert np.allclose(p, 1.0)
    assert priority(entry(), goals, ResetHeuristic(GOAL_GUIDED)) == pytest.approx(1.0)


def test_priority_uniform():
    p = priorities(np.array([1.0, 9.0, 4.0]), np.full(3, np.inf), ResetHeuristic(UNIFORM))
    assert np.allclose(p, 1.0)


def test_mixed_weight_one_matches_visitation():
    visits = np.array([1.0, 3.0, 8.0])
    dists = np.array([2.0, 5.0, 0.4])
    mixed = priorities(visits, dists, ResetHeuristic(MIXED, mix_weight=1.0))
    vis = priorities(visits, dists, ResetHeuristic(VISITATION))
    assert np.allclose(mixed / mixed.sum(), vis / vis.sum())


def test_mixed_weight_zero_matches_goal_guided():
    visits = np.array([1.0, 3.0, 8.0])
    dists = np.array([2.0, 5.0, 0.4])
    mixed = priorities(visits, dists, ResetHeuristic(MIXED, mix_weight=0.0))
    goal = priorities(visits, dists, ResetHeuristic(GOAL_GUIDED))
    assert np.allclose(mixed / mixed.sum(), goal / goal.sum())


# -- select_reset ----------------------------------------------------------


def empirical(visits, dists, heuristic, draws=40000, seed=0):
    rng = np.random.default_rng(seed)
    counts = Counter(
        select_reset(visits, dists, heuristic, rng) for _ in range(draws)
    )
    return np.array([counts[i] / draws for i in range(len(visits))])


def test_select_visitation_p1():
    freqs = empirical(np.array([1.0, 3.0]), np.full(2, np.inf), ResetHeuristic(VISITATION))
    assert np.abs(freqs - [0.75, 0.25]).max() < 0.02


def test_select_visitation_p2():
    freqs = empirical(
        np.array([1.0, 3.0]), np.full(2, np.inf), ResetHeuristic(VISITATION, power=2.0)
    )
    assert np.abs(freqs - [0.9, 0.1]).max() < 0.02


def test_select_uniform():
    freqs = empirical(np.ones(5), np.full(5, np.inf), ResetHeuristic(UNIFORM))
    assert np.abs(freqs - 0.2).max() < 0.02


def test_select_empty_cache_raises():
    with pytest.raises(RuntimeError):
        select_reset(np.array([]), np.array([]), ResetHeuristic(VISITATION), np.random.default_rng(0))


def test_select_deterministic_for_fixed_rng():
    visits = np.arange(1.0, 21.0)
    dists = np.full(20, np.inf)
    a = [select_reset(visits, dists, ResetHeuristic(VISITATION), np.random.default_rng(9)) for _ in range(1)]
    b = [select_reset(visits, dists, ResetHeuristic(VISITATION), np.random.default_rng(9)) for _ in range(1)]
    assert a == b


# -- random_action ---------------------------------------------------------


def test_random_action_uniform_components():
    rng = np.random.default_rng(123)
    n = 100_000
    actions = [random_action(rng) for _ in range(n)]
    for value in (-1, 0, 1):
        freq = sum(1 for a in actions if a.forward == value) / n
        assert abs(freq - 1 / 3) < 0.01
    jump_freq = sum(a.jump for a in actions) / n
    assert abs(jump_freq - 0.5) < 0.01


def test_random_action_deterministic():
    a = [random_action(np.random.default_rng(5)) for _ in range(1)]
    b = [random_action(np.random.default_rng(5)) for _ in range(1)]
    assert a == b


# -- run loop --------------------------------------------------------------


class TraceWorld:
    """Wraps a world so created agents record their step/restore calls."""

    def __init__(self, world):
        self._world = world
        self.events = []

    def __getattr__(self, name):
        return getattr(self._world, name)

    def make_agent(self):
        agent = self._world.make_agent()
        events = self.events
        real_step, real_restore = agent.step, agent.restore

        def step(a):
            events.append(("step", None))
            return real_step(a)

        def restore(c):
            events.append(("restore", c))
            return real_restore(c)

        agent.step = step
        agent.restore = restore
        return agent


def test_reset_schedule_single_agent(small_world):
    traced = TraceWorld(small_world)
    cfg = ExplorerConfig(total_timesteps=1024, reset_interval=128, num_agents=1, seed=0)
    run(traced, cfg)
    assert len(traced.events) == 1024
    for own_step, (kind, _) in enumerate(traced.events, start=1):
        if own_step % 128 == 0:
            assert kind == "restore", f"own-step {own_step}"
        else:
            assert kind == "step", f"own-step {own_step}"


def test_single_reset_when_t_equals_interval(small_world):
    traced = TraceWorld(small_world)
    cfg = ExplorerConfig(total_timesteps=128, reset_interval=128, num_agents=1, seed=0)
    run(traced, cfg)
    resets = [k for k, _ in traced.events if k == "restore"]
    assert len(resets) == 1
    assert traced.events[127][0] == "restore"


def test_start_only_always_restores_spawn(small_world):
    traced = TraceWorld(small_world)
    spawn_ckpt = small_world.make_agent().save()
    cfg = ExplorerConfig(
        total_timesteps=640,
        reset_interval=128,
        num_agents=1,
        heuristic=ResetHeuristic(START_ONLY),
        seed=1,
    )
    run(traced, cfg)
    restores = [c for k, c in traced.events if k == "restore"]
    assert len(restores) == 5
    assert all(c == spawn_ckpt for c in restores)


def test_run_metrics_monotone_and_consistent(small_world):
    cfg = ExplorerConfig(total_timesteps=5000, seed=3)
    rep = run(small_world, cfg)
    ts = [r.timestep for r in rep.series]
    assert ts == sorted(set(ts))
    assert ts[0] == 0 and ts[-1] == 5000
    reached = [r.goals_reached for r in rep.series]
    uniq = [r.unique_positions for r in rep.series]
    assert reached == sorted(reached)
    assert uniq == sorted(uniq)
    assert uniq[-1] == rep.summary["final_unique_positions"] == len(rep.points)
    assert all(r.goals_reached <= r.goals_total for r in rep.series)


def test_run_reproducible(small_world):
    cfg = ExplorerConfig(total_timesteps=4000, seed=11)
    a = run(small_world, cfg)
    b = run(small_world, cfg)
    assert a.series == b.series
    assert a.points == b.points
    assert a.summary == b.summary


def test_run_seed_changes_outcome(small_world):
    a = run(small_world, ExplorerConfig(total_timesteps=4000, seed=1))
    b = run(small_world, ExplorerConfig(total_timesteps=4000, seed=2))
    assert a.points != b.points


def test_goal_drain_consistency_after_run(small_world):
    cfg = ExplorerConfig(total_timesteps=8000, heuristic=ResetHeuristic(GOAL_GUIDED), seed=5)
    rep = run(small_world, cfg)
    pts = np.array([p.position for p in rep.points])
    for g in rep.goals:
        d = np.linalg.norm(pts - np.asarray(g.position), axis=1).min()
        if g.reached:
            assert d <= 1.0 + 1e-9
        else:
            assert d > 1.0


def test_concurrent_mode_runs_full_budget(small_world):
    cfg = ExplorerConfig(total_timesteps=3000, num_agents=4, seed=7)
    rep = run(small_world, cfg, concurrent=True)
    assert rep.series[-1].timestep == 3000
    assert rep.summary["final_unique_positions"] == len(rep.points)
    assert rep.summary["goals_reached"] >= 1
