"""Deterministic simulated worlds and the agent step/save/restore contract.

Worlds are 1 m heightfield grids: walls, obstacle boxes, and floor holes are
baked into cell heights, so all collision reduces to ground-height lookups
with a step-up limit.  Physics is fixed-tick, closed-form per tick, and uses
plain Python floats evaluated in a fixed order, so trajectories are exactly
reproducible and checkpoints are tiny canonical byte strings.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Position
from .navmesh import NavMesh

DT = 0.1  # seconds per tick
MOVE_SPEED = 4.0  # m/s planar
JUMP_SPEED = 5.0  # m/s initial vertical
GRAVITY = 9.8  # m/s^2
STEP_UP = 0.5  # max climbable rise per tick, meters
TURN_RATE = math.pi / 2  # rad/s
KILL_MARGIN = 50.0  # freeze this far below bounds.min_z
TAU = 2.0 * math.pi

WORLD_NAMES = ("small_analog", "large_analog", "traversal_analog")

_CKPT_MAGIC = b"RPC1"
_CKPT_STRUCT = struct.Struct("<4sH")
_CKPT_STATE = struct.Struct("<5dBB")


@dataclass(frozen=True)
class MultiDiscreteAction:
    """One controller input: each axis in {-1, 0, +1}, jump in {0, 1}."""

    forward: int = 0
    strafe: int = 0
    turn: int = 0
    jump: int = 0

    def validate(self) -> None:
        if self.forward not in (-1, 0, 1):
            raise ValueError(f"forward out of range: {self.forward}")
        if self.strafe not in (-1, 0, 1):
            raise ValueError(f"strafe out of range: {self.strafe}")
        if self.turn not in (-1, 0, 1):
            raise ValueError(f"turn out of range: {self.turn}")
        if self.jump not in (0, 1):
            raise ValueError(f"jump out of range: {self.jump}")


@dataclass(frozen=True)
class Observation:
    position: Position
    yaw: float
    grounded: bool


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, min/max corners in meters."""

    xmin: float
    ymin: float
    zmin: float
    xmax: float
    ymax: float
    zmax: float

    def contains(self, p) -> bool:
        x, y, z = p
        return (
            self.xmin <= x <= self.xmax
            and self.ymin <= y <= self.ymax
            and self.zmin <= z <= self.zmax
        )


@dataclass(frozen=True)
class BugRegion:
    """Labeled volume used by tests to assert a seeded bug was evidenced."""

    label: str
    box: Box


class World:
    """Immutable world geometry shared read-only across agents."""

    def __init__(
        self,
        name: str,
        seed: int,
        heightfield: np.ndarray,
        walkable: np.ndarray,
        bounds: Box,
        spawn_xy: tuple,
        walls: list,
        seeded_bugs: list,
    ):
        self.name = name
        self.seed = seed
        self.heightfield = heightfield
        self.walkable = walkable
        self.bounds = bounds
        self.walls = walls
        self.seeded_bugs = seeded_bugs
        self.width = heightfield.shape[0]
        self.depth = heightfield.shape[1]
        self._h = heightfield.tolist()
        self.kill_z = bounds.zmin - KILL_MARGIN
        sx, sy = spawn_xy
        self.spawn = Position(sx, sy, self.ground_height(sx, sy))
        if not bounds.contains(self.spawn):
            raise ValueError("spawn must lie inside bounds")
        self.navmesh = navmesh_from_grid(heightfield, walkable)

    def ground_height(self, x: float, y: float) -> float:
        """Effective ground height at (x, y); -inf outside the footprint."""
        ix = math.floor(x)
        iy = math.floor(y)
        if 0 <= ix < self.width and 0 <= iy < self.depth:
            return self._h[ix][iy]
        return -math.inf

    def make_agent(self) -> "AgentEnv":
        return AgentEnv(self)


class AgentEnv:
    """Single agent's deterministic kinematic state in a shared world."""

    def __init__(self, world: World):
        self.world = world
        self.reset()

    def reset(self) -> Observation:
        sp = self.world.spawn
        self.x = sp.x
        self.y = sp.y
        self.z = sp.z
        self.vz = 0.0
        self.yaw = 0.0
        self.grounded = True
        self.frozen = False
        return self.observe()

    def observe(self) -> Observation:
        return Observation(Position(self.x, self.y, self.z), self.yaw, self.grounded)

    @property
    def recoverable(self) -> bool:
        """False once frozen, or while airborne with no floor beneath to land on."""
        if self.frozen:
            return False
        if self.grounded:
            return True
        return self.world.ground_height(self.x, self.y) > self.world.kill_z

    def step(self, a: MultiDiscreteAction) -> Observation:
        a.validate()
        if self.frozen:
            return self.observe()
        world = self.world
        if a.turn:
            self.yaw = (self.yaw + a.turn * TURN_RATE * DT) % TAU
        if self.grounded and a.jump:
            self.vz = JUMP_SPEED
            self.grounded = False
        f = a.forward
        s = a.strafe
        if f or s:
            cy = math.cos(self.yaw)
            sy = math.sin(self.yaw)
            # forward = +x at yaw 0; strafe right = -y at yaw 0
            mx = f * cy + s * sy
            my = f * sy - s * cy
            norm = math.sqrt(mx * mx + my * my)
            dx = MOVE_SPEED * DT * mx / norm
            dy = MOVE_SPEED * DT * my / norm
            limit = self.z + STEP_UP if self.grounded else self.z
            nx = self.x + dx
            ny = self.y + dy
            # Blocked moves slide along the free axis.
            if world.ground_height(nx, ny) <= limit + 1e-9:
                self.x = nx
                self.y = ny
            elif world.ground_height(nx, self.y) <= limit + 1e-9:
                self.x = nx
            elif world.ground_height(self.x, ny) <= limit + 1e-9:
                self.y = ny
        g = world.ground_height(self.x, self.y)
        if self.grounded:
            if g < self.z - 1e-9:
                # Walked off a ledge.
                self.grounded = False
                self.vz = 0.0
            else:
                self.z = g
        if not self.grounded:
            # Exact ballistic update per tick.
            self.z += self.vz * DT - 0.5 * GRAVITY * DT * DT
            self.vz -= GRAVITY * DT
            g = world.ground_height(self.x, self.y)
            if self.vz <= 0.0 and self.z <= g:
                self.z = g
                self.vz = 0.0
                self.grounded = True
            elif self.z < world.kill_z:
                self.frozen = True
        return self.observe()

    def save(self) -> bytes:
        name = self.world.name.encode()
        flags = (1 if self.grounded else 0) | (2 if self.frozen else 0)
        return (
            _CKPT_STRUCT.pack(_CKPT_MAGIC, len(name))
            + name
            + _CKPT_STATE.pack(self.x, self.y, self.z, self.vz, self.yaw % TAU, flags, 0)
        )

    def restore(self, c: bytes) -> Observation:
        try:
            magic, nlen = _CKPT_STRUCT.unpack_from(c, 0)
            if magic != _CKPT_MAGIC:
                raise ValueError("bad checkpoint magic")
            off = _CKPT_STRUCT.size
            name = c[off : off + nlen].decode()
            off += nlen
            x, y, z, vz, yaw, flags, _ = _CKPT_STATE.unpack_from(c, off)
            if off + _CKPT_STATE.size != len(c):
                raise ValueError("trailing bytes in checkpoint")
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError(f"corrupted checkpoint: {exc}") from exc
        if name != self.world.name:
            raise ValueError(f"checkpoint for world {name!r}, not {self.world.name!r}")
        if not all(math.isfinite(v) for v in (x, y, z, vz, yaw)):
            raise ValueError("non-finite checkpoint state")
        self.x, self.y, self.z, self.vz, self.yaw = x, y, z, vz, yaw % TAU
        self.grounded = bool(flags & 1)
        self.frozen = bool(flags & 2)
        return self.observe()


# -- navmesh derivation ----------------------------------------------------


def navmesh_from_grid(heightfield: np.ndarray, walkable: np.ndarray) -> NavMesh:
    """Decompose same-height walkable cells into maximal axis-aligned rectangles."""
    w, d = heightfield.shape
    assigned = np.zeros((w, d), dtype=bool)
    rects = []
    for iy in range(d):
        for ix in range(w):
            if not walkable[ix, iy] or assigned[ix, iy]:
                continue
            h = heightfield[ix, iy]
            x2 = ix
            while (
                x2 + 1 < w
                and walkable[x2 + 1, iy]
                and not assigned[x2 + 1, iy]
                and heightfield[x2 + 1, iy] == h
            ):
                x2 += 1
            y2 = iy
            while (
                y2 + 1 < d
                and walkable[ix : x2 + 1, y2 + 1].all()
                and not assigned[ix : x2 + 1, y2 + 1].any()
                and (heightfield[ix : x2 + 1, y2 + 1] == h).all()
            ):
                y2 += 1
            assigned[ix : x2 + 1, iy : y2 + 1] = True
            rects.append((float(ix), float(iy), float(x2 + 1), float(y2 + 1), float(h)))
    polygons = [
        [(x0, y0, h), (x1, y0, h), (x1, y1, h), (x0, y1, h)]
        for x0, y0, x1, y1, h in rects
    ]
    # Adjacency only where rectangles share a full edge (two corner vertices).
    edges: dict = {}
    for i, (x0, y0, x1, y1, h) in enumerate(rects):
        corners = [(x0, y0, h), (x1, y0, h), (x1, y1, h), (x0, y1, h)]
        for j in range(4):
            key = tuple(sorted((corners[j], corners[(j + 1) % 4])))
            edges.setdefault(key, []).append(i)
    adjacency = sorted(
        tuple(sorted(ids)) for ids in edges.values() if len(ids) == 2
    )
    return NavMesh(polygons, adjacency)


# -- world construction ----------------------------------------------------


class _GridBuilder:
    """Mutable helper for stamping boxes and regions onto a heightfield."""

    def __init__(self, width: int, depth: int, base_height: float = 0.0):
        self.h = np.full((width, depth), base_height, dtype=np.float64)
        self.mesh_ok = np.zeros((width, depth), dtype=bool)
        self.walls: list = []

    def stamp(self, x0, y0, x1, y1, height, record_wall=True):
        """Raise cells [x0, x1) x [y0, y1) to the given height."""
        self.h[x0:x1, y0:y1] = height
        self.mesh_ok[x0:x1, y0:y1] = False
        if record_wall:
            self.walls.append(Box(float(x0), float(y0), 0.0, float(x1), float(y1), height))

    def dig(self, x0, y0, x1, y1, depth_z):
        self.h[x0:x1, y0:y1] = depth_z
        self.mesh_ok[x0:x1, y0:y1] = False

    def mark_walkable(self, x0, y0, x1, y1):
        self.mesh_ok[x0:x1, y0:y1] = True

    def finish_walkable(self) -> np.ndarray:
        """Erode mesh cells that touch a rise taller than the step-up limit.

        Mirrors how nav meshes shrink by the agent radius around walls and
        obstacles; cells at drops (ledges, bridge rims) stay meshed.
        """
        w, d = self.h.shape
        out = self.mesh_ok.copy()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                shifted = np.full((w, d), -np.inf)
                xs = slice(max(dx, 0), w + min(dx, 0))
                ys = slice(max(dy, 0), d + min(dy, 0))
                xd = slice(max(-dx, 0), w + min(-dx, 0))
                yd = slice(max(-dy, 0), d + min(-dy, 0))
                shifted[xd, yd] = self.h[xs, ys]
                out &= ~(shifted - self.h > STEP_UP)
        return out


def _build_small(seed: int) -> World:
    size = 50
    g = _GridBuilder(size, size)
    g.mark_walkable(1, 1, size - 1, size - 1)
    # Perimeter wall, 2.5 m, one cell thick.
    g.stamp(0, 0, size, 1, 2.5)
    g.stamp(0, size - 1, size, size, 2.5)
    g.stamp(0, 0, 1, size, 2.5)
    g.stamp(size - 1, 0, size, size, 2.5)
    # Lowered section on the south wall: reachable by jumping from the step box.
    g.stamp(22, 0, 28, 1, 1.2)
    g.stamp(23, 1, 27, 3, 0.5)  # step box inside, against the lowered section
    # Central depot building; the playable space is the ring corridor around it.
    g.stamp(5, 5, 45, 45, 3.0)
    # Obstacle boxes narrowing the corridor.
    g.stamp(10, 1, 13, 3, 1.0)
    g.stamp(1, 30, 3, 33, 0.8)
    # Floor hole in the east corridor, partly hidden behind a decorative box.
    g.stamp(45, 38, 47, 40, 1.0)
    g.dig(46, 40, 48, 42, -100.0)
    bounds = Box(0.0, 0.0, 0.0, float(size), float(size), 3.5)
    bugs = [
        BugRegion("wall_escape", Box(5.0, -25.0, -75.0, 45.0, 0.0, -45.0)),
        BugRegion("oob_fall", Box(44.0, 37.0, -75.0, 50.0, 45.0, -45.0)),
    ]
    return World("small_analog", seed, g.h, g.finish_walkable(), bounds, (33.5, 2.5), g.walls, bugs)


def _build_large(seed: int) -> World:
    size = 228
    rng = np.random.default_rng(seed)
    g = _GridBuilder(size, size)
    g.mark_walkable(1, 1, size - 1, size - 1)
    # Perimeter wall.
    g.stamp(0, 0, size, 1, 2.5)
    g.stamp(0, size - 1, size, size, 2.5)
    g.stamp(0, 0, 1, size, 2.5)
    g.stamp(size - 1, 0, size, size, 2.5)
    # City blocks on a 57 m pitch: 50 m buildings, 7 m streets.
    pitch, block = 57, 50
    for gx in range(4):
        for gy in range(4):
            x0 = 3 + pitch * gx
            y0 = 3 + pitch * gy
            height = float(rng.uniform(3.0, 6.0))
            g.stamp(x0, y0, x0 + block, y0 + block, height)
    # Seeded escape routes: lowered perimeter sections with a step box inside.
    bugs = []
    n_escapes = 2 + int(rng.integers(0, 2))
    sides = rng.permutation(4)[:n_escapes]
    for i, side in enumerate(sides):
        pos = int(rng.integers(30, size - 34))
        if side == 0:
            g.stamp(pos, 0, pos + 4, 1, 1.2)
            g.stamp(pos + 1, 1, pos + 3, 3, 0.5)
            region = Box(pos - 20.0, -25.0, -75.0, pos + 24.0, 0.0, -45.0)
        elif side == 1:
            g.stamp(pos, size - 1, pos + 4, size, 1.2)
            g.stamp(pos + 1, size - 3, pos + 3, size - 1, 0.5)
            region = Box(pos - 20.0, float(size), -75.0, pos + 24.0, size + 25.0, -45.0)
        elif side == 2:
            g.stamp(0, pos, 1, pos + 4, 1.2)
            g.stamp(1, pos + 1, 3, pos + 3, 0.5)
            region = Box(-25.0, pos - 20.0, -75.0, 0.0, pos + 24.0, -45.0)
        else:
            g.stamp(size - 1, pos, size, pos + 4, 1.2)
            g.stamp(size - 3, pos + 1, size - 1, pos + 3, 0.5)
            region = Box(float(size), pos - 20.0, -75.0, size + 25.0, pos + 24.0, -45.0)
        bugs.append(BugRegion(f"escape_{i}", region))
    bounds = Box(0.0, 0.0, 0.0, float(size), float(size), 7.0)
    # Spawn on the central street crossing.
    return World("large_analog", seed, g.h, g.finish_walkable(), bounds, (113.5, 113.5), g.walls, bugs)


def _build_traversal(seed: int) -> World:
    size = 150
    g = _GridBuilder(size, size)
    # Ground exists everywhere but only selected areas belong to the mesh.
    g.stamp(0, 0, size, 1, 2.5)
    g.stamp(0, size - 1, size, size, 2.5)
    g.stamp(0, 0, 1, size, 2.5)
    g.stamp(size - 1, 0, size, size, 2.5)
    # Fixed storey layout: corners low, edges mid, center high.  The center
    # tower's 15-step staircase is the only one long enough to need the room
    # the middle row provides.
    heights = [2.5, 5.0, 2.5, 5.0, 7.5, 5.0, 2.5, 5.0, 2.5]
    towers = []
    for gy in range(3):
        for gx in range(3):
            x0 = 15 + 45 * gx
            y0 = 15 + 45 * gy
            h = float(heights[gy * 3 + gx])
            g.stamp(x0, y0, x0 + 20, y0 + 20, h)
            g.mark_walkable(x0, y0, x0 + 20, y0 + 20)
            towers.append((x0, y0, h))
            # Staircase down the south face: 0.5 m per cell.
            steps = int(round(h / 0.5))
            sx = x0 + 8
            for k in range(steps):
                yk = y0 - 1 - k
                g.h[sx : sx + 3, yk] = h - 0.5 * (k + 1)
                g.mark_walkable(sx, yk, sx + 3, yk + 1)
    # Jump-gap bridges between horizontally adjacent equal-height towers.
    for gy in range(3):
        for gx in range(2):
            a = towers[gy * 3 + gx]
            b = towers[gy * 3 + gx + 1]
            if a[2] == b[2]:
                h = a[2]
                ymid = a[1] + 9
                g.stamp(a[0] + 20, ymid, a[0] + 31, ymid + 2, h)
                g.stamp(b[0] - 11, ymid, b[0], ymid + 2, h)
                g.mark_walkable(a[0] + 20, ymid, a[0] + 31, ymid + 2)
                g.mark_walkable(b[0] - 11, ymid, b[0], ymid + 2)
                # 3 m gap in the middle of the bridge: cross by jumping.
                g.h[a[0] + 31 : b[0] - 11, ymid : ymid + 2] = 0.0
                g.mesh_ok[a[0] + 31 : b[0] - 11, ymid : ymid + 2] = False
    # Spawn court on the ground, part of the mesh, below the central tower's stair.
    g.mark_walkable(60, 2, 90, 14)
    bounds = Box(0.0, 0.0, 0.0, float(size), float(size), 8.5)
    bugs = [
        BugRegion("fall_zone_ne", Box(131.0, 131.0, 0.0, 146.0, 146.0, 1.5)),
        BugRegion("fall_zone_nw", Box(4.0, 131.0, 0.0, 14.0, 146.0, 1.5)),
    ]
    return World("traversal_analog", seed, g.h, g.finish_walkable(), bounds, (75.5, 7.5), g.walls, bugs)


_BUILDERS = {
    "small_analog": _build_small,
    "large_analog": _build_large,
    "traversal_analog": _build_traversal,
}


def build_world(name: str, seed: int) -> World:
    """Construct a built-in world; deterministic for a fixed (name, seed)."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown world {name!r}; choose from {WORLD_NAMES}") from None
    return builder(int(seed))


# -- plain-text export -----------------------------------------------------


def dumps_world(world: World) -> str:
    """Serialize geometry: header, row-major height grid, walls, bug regions."""
    b = world.bounds
    lines = [
        f"world {world.name} {world.seed}",
        f"bounds {b.xmin:.6f} {b.ymin:.6f} {b.zmin:.6f} {b.xmax:.6f} {b.ymax:.6f} {b.zmax:.6f}",
        f"spawn {world.spawn.x:.6f} {world.spawn.y:.6f} {world.spawn.z:.6f}",
        f"grid {world.width} {world.depth}",
    ]
    for iy in range(world.depth):
        lines.append("row " + " ".join(f"{world.heightfield[ix, iy]:.6f}" for ix in range(world.width)))
    for wall in world.walls:
        lines.append(
            f"box {wall.xmin:.6f} {wall.ymin:.6f} {wall.zmin:.6f} "
            f"{wall.xmax:.6f} {wall.ymax:.6f} {wall.zmax:.6f}"
        )
    for bug in world.seeded_bugs:
        r = bug.box
        lines.append(
            f"bug {bug.label} {r.xmin:.6f} {r.ymin:.6f} {r.zmin:.6f} "
            f"{r.xmax:.6f} {r.ymax:.6f} {r.zmax:.6f}"
        )
    return "\n".join(lines) + "\n"


def save_trajectory(path, actions: list, positions: list) -> None:
    """Golden trajectory: one 'f s t j x y z' line per step, 6-decimal text."""
    with open(path, "w") as fh:
        fh.write("# action(forward strafe turn jump) position(x y z)\n")
        for a, p in zip(actions, positions):
            fh.write(
                f"{a.forward} {a.strafe} {a.turn} {a.jump} "
                f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n"
            )


def load_trajectory(path) -> tuple:
    actions = []
    positions = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            f, s, t, j, x, y, z = line.split()
            actions.append(MultiDiscreteAction(int(f), int(s), int(t), int(j)))
            positions.append(Position(float(x), float(y), float(z)))
    return actions, positions
