"""The exploration loop: random actions plus periodic resets to cached states.

Each agent repeatedly observes its position, stores it in the shared cache
when it is novel, drains nearby goals, and every ``reset_interval`` of its
own steps restores to a cached checkpoint chosen by the configured reset
heuristic instead of acting.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .environment import MultiDiscreteAction, World
from .navmesh import GoalSet, sample_goals
from .report import MetricsRecorder, RunReport, build_report
from .spatial_cache import SpatialIndex

VISITATION = "visitation"
GOAL_GUIDED = "goal"
MIXED = "mixed"
UNIFORM = "uniform"
START_ONLY = "start-only"
HEURISTIC_KINDS = (VISITATION, GOAL_GUIDED, MIXED, UNIFORM, START_ONLY)

# Goal-guided priorities clamp the distance from below so an entry parked
# next to an unreachable goal cannot dominate the reset distribution.
GOAL_DISTANCE_FLOOR = 1.0

METRIC_INTERVAL = 1000


@dataclass(frozen=True)
class ResetHeuristic:
    """Which priority function scores cached states, and how sharply."""

    kind: str = MIXED
    power: float = 1.0
    mix_weight: float = 0.5

    def __post_init__(self):
        if self.kind not in HEURISTIC_KINDS:
            raise ValueError(f"unknown heuristic kind {self.kind!r}")
        if not self.power > 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError(f"mix_weight must be in [0, 1], got {self.mix_weight}")


@dataclass(frozen=True)
class ExplorerConfig:
    total_timesteps: int
    reset_interval: int = 128
    threshold_k: float = 1.0
    num_agents: int = 16
    goal_spacing: float = 5.0
    heuristic: ResetHeuristic = field(default_factory=ResetHeuristic)
    seed: int = 0

    def __post_init__(self):
        if self.total_timesteps <= 0:
            raise ValueError("total_timesteps must be positive")
        if self.reset_interval <= 0:
            raise ValueError("reset_interval must be positive")
        if self.reset_interval > self.total_timesteps:
            raise ValueError("reset_interval must not exceed total_timesteps")
        if self.threshold_k <= 0:
            raise ValueError("threshold_k must be positive")
        if self.num_agents <= 0:
            raise ValueError("num_agents must be positive")
        if self.goal_spacing <= 0:
            raise ValueError("goal_spacing must be positive")


def priorities(
    visit_counts: np.ndarray,
    goal_distances: np.ndarray,
    heuristic: ResetHeuristic,
) -> np.ndarray:
    """Raw priority score for each cached entry (before the power is applied).

    Visitation scores 1/n, goal-guided scores 1/max(d, floor) with a uniform
    fallback once every goal is reached, and mixed convex-combines the two
    after normalizing each to sum 1 so the weight is scale-free.
    """
    kind = heuristic.kind
    if kind == VISITATION:
        return 1.0 / visit_counts
    if kind == GOAL_GUIDED:
        return _goal_scores(goal_distances)
    if kind == MIXED:
        v = 1.0 / visit_counts
        g = _goal_scores(goal_distances)
        w = heuristic.mix_weight
        return w * (v / v.sum()) + (1.0 - w) * (g / g.sum())
    if kind == UNIFORM:
        return np.ones(len(visit_counts))
    raise ValueError(f"{kind!r} is not a priority-based heuristic")


def _goal_scores(goal_distances: np.ndarray) -> np.ndarray:
    if np.isinf(goal_distances).all():
        return np.ones(len(goal_distances))
    return 1.0 / np.maximum(goal_distances, GOAL_DISTANCE_FLOOR)


def priority(entry, goals, heuristic: ResetHeuristic) -> float:
    """Score a single cached entry (see :func:`priorities` for the rules)."""
    from .navmesh import distance_to_unreached

    if isinstance(goals, GoalSet):
        d = goals.distance_to_unreached(entry.position)
    else:
        d = distance_to_unreached(goals, entry.position)
    visits = np.array([float(entry.visit_count)])
    dists = np.array([d])
    if heuristic.kind == MIXED:
        # Single-entry normalization degenerates; report the unnormalized mix.
        w = heuristic.mix_weight
        return float(w / entry.visit_count + (1.0 - w) * _goal_scores(dists)[0])
    return float(priorities(visits, dists, heuristic)[0])


def select_reset(
    visit_counts: np.ndarray,
    goal_distances: np.ndarray,
    heuristic: ResetHeuristic,
    rng: np.random.Generator,
) -> int:
    """Sample an entry index with probability proportional to priority^power."""
    n = len(visit_counts)
    if n == 0:
        raise RuntimeError("select_reset on an empty cache")
    eta = priorities(visit_counts, goal_distances, heuristic)
    weights = eta ** heuristic.power
    # Inverse-CDF sampling; identical distribution to rng.choice(n, p=...)
    # but without its per-call normalization/validation overhead.
    cum = np.cumsum(weights)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def random_action(rng: np.random.Generator) -> MultiDiscreteAction:
    """Each component uniform over its range, independently."""
    return MultiDiscreteAction(
        forward=int(rng.integers(-1, 2)),
        strafe=int(rng.integers(-1, 2)),
        turn=int(rng.integers(-1, 2)),
        jump=int(rng.integers(0, 2)),
    )


class _ActionStream:
    """Pre-draws uniform random actions in blocks; equivalent distribution,
    far fewer RNG calls than one draw per component per step."""

    def __init__(self, rng: np.random.Generator, block: int = 1024):
        self.rng = rng
        self.block = block
        self._buf = None
        self._i = 0

    def next(self) -> MultiDiscreteAction:
        if self._buf is None or self._i >= self.block:
            moves = self.rng.integers(-1, 2, size=(self.block, 3))
            jumps = self.rng.integers(0, 2, size=self.block)
            self._buf = (moves, jumps)
            self._i = 0
        moves, jumps = self._buf
        i = self._i
        self._i = i + 1
        return MultiDiscreteAction(
            int(moves[i, 0]), int(moves[i, 1]), int(moves[i, 2]), int(jumps[i])
        )


class _GoalDistanceTracker:
    """Per-entry distance to the nearest unreached goal, updated incrementally.

    A drain only changes the distance of entries whose recorded nearest goal
    was one of the drained goals, so only those entries are re-queried.
    """

    def __init__(self, goals: GoalSet):
        self.goals = goals
        self.distances: list = []
        self.nearest: list = []
        self._positions: list = []

    def append(self, position) -> None:
        d = self.goals.distance_to_unreached(position)
        if math.isinf(d):
            self.distances.append(math.inf)
            self.nearest.append(-1)
        else:
            dists, idx = self.goals.distances_to_unreached([position])
            self.distances.append(float(dists[0]))
            self.nearest.append(int(idx[0]))
        self._positions.append(tuple(position))

    def invalidate(self, drained: list) -> None:
        if not drained:
            return
        drained_set = set(drained)
        stale = [i for i, g in enumerate(self.nearest) if g in drained_set]
        if not stale:
            return
        pts = [self._positions[i] for i in stale]
        dists, idx = self.goals.distances_to_unreached(pts)
        for row, i in enumerate(stale):
            self.distances[i] = float(dists[row])
            self.nearest[i] = int(idx[row])

    def array(self, n: int) -> np.ndarray:
        return np.asarray(self.distances[:n], dtype=np.float64)


class _Shared:
    """State shared by all agent workers during one run."""

    def __init__(self, world: World, config: ExplorerConfig):
        self.world = world
        self.config = config
        self.cache = SpatialIndex(config.threshold_k)
        self.goals = GoalSet(sample_goals(world.navmesh, config.goal_spacing))
        self.tracker = _GoalDistanceTracker(self.goals)
        self.recorder = MetricsRecorder(self.goals, self.cache)
        self.lock = threading.Lock()  # guards goals/tracker/recorder/global_t
        self.global_t = 0
        seq = np.random.SeedSequence(config.seed)
        children = seq.spawn(config.num_agents + 1)
        self.reset_rng = np.random.default_rng(children[-1])
        self.action_rngs = [np.random.default_rng(c) for c in children[:-1]]
        self.spawn_checkpoint = world.make_agent().save()
        # Parallel to cache entry ids: True when the checkpoint restores a
        # recoverable state (not frozen, and not falling into a hole or the
        # void).  Doomed discoveries stay cached as evidence but are never
        # reset targets; resetting into a hopeless fall wastes the whole
        # segment and keeps minting near-duplicate airborne entries that
        # soak up reset probability.
        self.resettable: list = []

    def process_observation(self, position, t: int, checkpoint_fn, resettable: bool = True) -> None:
        drained = self.goals.drain(position, t)
        ckpt = checkpoint_fn()
        eid = self.cache.insert_if_novel(position, ckpt, t)
        if eid is None:
            if drained:
                # Goal-claiming positions are cached even when a neighbor
                # sits within threshold_k, so every reached goal keeps a
                # witnessing entry inside the drain radius.
                eid = self.cache.insert(position, ckpt, t)
            else:
                self.cache.record_visit(position)
                return
        self.tracker.append(position)
        self.resettable.append(resettable)
        if drained:
            self.tracker.invalidate(drained)

    def choose_reset_checkpoint(self):
        cfg = self.config.heuristic
        if cfg.kind == START_ONLY:
            return self.spawn_checkpoint
        positions, visits, n = self._snapshot()
        dists = self.tracker.array(n)
        mask = np.asarray(self.resettable[:n], dtype=bool)
        if mask.all():
            idx = select_reset(visits, dists, cfg, self.reset_rng)
        else:
            ids = np.flatnonzero(mask)
            idx = int(ids[select_reset(visits[ids], dists[ids], cfg, self.reset_rng)])
        return self.cache.checkpoint_of(idx)

    def _snapshot(self):
        pos, visits, _ = self.cache.snapshot_arrays()
        return pos, visits.astype(np.float64), len(visits)


def run(world: World, config: ExplorerConfig, concurrent: bool = False) -> RunReport:
    """Execute the exploration and return the final report.

    The default single-worker mode advances agents round-robin in one thread
    and is exactly reproducible for a fixed (config, seed).  Concurrent mode
    runs one thread per agent against the same shared state; results are
    statistically equivalent but not bit-identical.
    """
    shared = _Shared(world, config)
    agents = [world.make_agent() for _ in range(config.num_agents)]
    # The run begins by inserting each agent's reset state.
    for agent in agents:
        obs = agent.reset()
        shared.process_observation(obs.position, 0, agent.save)
    shared.recorder.sample(0)

    if concurrent:
        _run_concurrent(shared, agents)
    else:
        _run_single(shared, agents)

    return build_report(world, config, shared.cache, shared.goals, shared.recorder)


def _agent_step(shared: _Shared, agent, stream: _ActionStream, own_step: int, t: int):
    obs = agent.observe()
    shared.process_observation(obs.position, t, agent.save, agent.recoverable)
    if own_step % shared.config.reset_interval == 0:
        agent.restore(shared.choose_reset_checkpoint())
    else:
        agent.step(stream.next())


def _run_single(shared: _Shared, agents) -> None:
    config = shared.config
    streams = [_ActionStream(rng) for rng in shared.action_rngs]
    own = [0] * config.num_agents
    t = 0
    while t < config.total_timesteps:
        for i, agent in enumerate(agents):
            if t >= config.total_timesteps:
                break
            t += 1
            own[i] += 1
            _agent_step(shared, agent, streams[i], own[i], t)
            if t % METRIC_INTERVAL == 0 or t == config.total_timesteps:
                shared.recorder.sample(t)
    shared.global_t = t
    if not shared.recorder.sampled_at(t):
        shared.recorder.sample(t)


def _run_concurrent(shared: _Shared, agents) -> None:
    config = shared.config
    total = config.total_timesteps
    n = config.num_agents
    budgets = [total // n + (1 if i < total % n else 0) for i in range(n)]

    def worker(i: int):
        stream = _ActionStream(shared.action_rngs[i])
        agent = agents[i]
        for own_step in range(1, budgets[i] + 1):
            with shared.lock:
                shared.global_t += 1
                t = shared.global_t
            _agent_step_locked(shared, agent, stream, own_step, t)
            if t % METRIC_INTERVAL == 0 or t == total:
                with shared.lock:
                    shared.recorder.sample(t)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(n)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if not shared.recorder.sampled_at(total):
        shared.recorder.sample(total)


def _agent_step_locked(shared: _Shared, agent, stream, own_step: int, t: int):
    obs = agent.observe()
    # Single-writer serialization: cache insertion and the goal-distance
    # tracker append must happen in the same order, so both sit under the
    # shared lock.  Stepping the agent itself is single-owner and lock-free.
    live = agent.recoverable
    with shared.lock:
        shared.process_observation(obs.position, t, agent.save, live)
    if own_step % shared.config.reset_interval == 0:
        with shared.lock:
            ckpt = shared.choose_reset_checkpoint()
        agent.restore(ckpt)
    else:
        agent.step(stream.next())
