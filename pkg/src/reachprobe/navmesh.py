"""Walkable-surface mesh, goal sampling/draining, and point classification.

The mesh is a set of convex planar polygons; goals are points sampled from
polygon surfaces that the explorer is expected to reach.  Discovered points
are classified by their distance to the mesh: within NEAR_MESH_RADIUS they
are expected, beyond it they are likely bug evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Position

PLANARITY_TOL = 1e-6
NEAR_MESH_RADIUS = 3.0
GOAL_DRAIN_RADIUS = 1.0


class PointClass:
    """Labels for exported points."""

    GOAL_REACHED = "goal_reached"
    NEAR_MESH = "near_mesh"
    OFF_MESH = "off_mesh"


class ConvexPolygon:
    """A planar convex polygon in 3D with precomputed frame data."""

    def __init__(self, vertices):
        verts = np.asarray(vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) < 3:
            raise ValueError("polygon needs at least 3 XYZ vertices")
        self.vertices = verts
        self.normal = self._newell_normal(verts)
        self.centroid = verts.mean(axis=0)
        self._validate()
        # In-plane orthonormal frame for 2D work (sampling, inside tests).
        u = verts[1] - verts[0]
        u = u - np.dot(u, self.normal) * self.normal
        self.u_axis = u / np.linalg.norm(u)
        self.v_axis = np.cross(self.normal, self.u_axis)
        # Axis-aligned horizontal rectangle fast path for distance queries.
        self._aarect = self._as_axis_aligned_rect()

    @staticmethod
    def _newell_normal(verts):
        n = np.zeros(3)
        for i in range(len(verts)):
            a = verts[i]
            b = verts[(i + 1) % len(verts)]
            n[0] += (a[1] - b[1]) * (a[2] + b[2])
            n[1] += (a[2] - b[2]) * (a[0] + b[0])
            n[2] += (a[0] - b[0]) * (a[1] + b[1])
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("degenerate polygon (collinear vertices)")
        return n / norm

    def _validate(self):
        offsets = (self.vertices - self.centroid) @ self.normal
        if np.abs(offsets).max() > PLANARITY_TOL:
            raise ValueError("polygon is not planar within tolerance")
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a, b, c = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
            turn = np.dot(np.cross(b - a, c - b), self.normal)
            if turn < -PLANARITY_TOL:
                raise ValueError("polygon is not convex within tolerance")

    def _as_axis_aligned_rect(self):
        v = self.vertices
        if len(v) != 4 or abs(abs(self.normal[2]) - 1.0) > 1e-12:
            return None
        xs, ys = sorted(set(np.round(v[:, 0], 12))), sorted(set(np.round(v[:, 1], 12)))
        if len(xs) != 2 or len(ys) != 2:
            return None
        return (xs[0], xs[1], ys[0], ys[1], v[0, 2])

    def contains_projected(self, q, tol: float = PLANARITY_TOL) -> bool:
        """Whether the in-plane point q lies inside the polygon (boundary inclusive)."""
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            if np.dot(np.cross(b - a, q - a), self.normal) < -tol:
                return False
        return True

    def distance_to(self, p) -> float:
        """Exact distance from a 3D point to the polygon surface."""
        p = np.asarray(p, dtype=np.float64)
        offset = np.dot(p - self.centroid, self.normal)
        q = p - offset * self.normal
        if self.contains_projected(q):
            return abs(offset)
        best = math.inf
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a = verts[i]
            ab = verts[(i + 1) % n] - a
            t = np.dot(p - a, ab) / np.dot(ab, ab)
            t = min(1.0, max(0.0, t))
            best = min(best, float(np.linalg.norm(p - (a + t * ab))))
        return best

    def distances_to(self, points) -> np.ndarray:
        """Vectorized distance from many points to this polygon."""
        pts = np.asarray(points, dtype=np.float64)
        if self._aarect is not None:
            x0, x1, y0, y1, z = self._aarect
            dx = np.maximum(np.maximum(x0 - pts[:, 0], pts[:, 0] - x1), 0.0)
            dy = np.maximum(np.maximum(y0 - pts[:, 1], pts[:, 1] - y1), 0.0)
            dz = pts[:, 2] - z
            return np.sqrt(dx * dx + dy * dy + dz * dz)
        offs = (pts - self.centroid) @ self.normal
        proj = pts - offs[:, None] * self.normal
        inside = np.ones(len(pts), dtype=bool)
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            side = np.cross(np.broadcast_to(b - a, proj.shape), proj - a) @ self.normal
            inside &= side >= -PLANARITY_TOL
        dist = np.full(len(pts), np.inf)
        dist[inside] = np.abs(offs[inside])
        out = ~inside
        if out.any():
            po = pts[out]
            best = np.full(len(po), np.inf)
            for i in range(n):
                a = verts[i]
                ab = verts[(i + 1) % n] - a
                t = np.clip((po - a) @ ab / np.dot(ab, ab), 0.0, 1.0)
                closest = a + t[:, None] * ab
                best = np.minimum(best, np.linalg.norm(po - closest, axis=1))
            dist[out] = best
        return dist

    def area(self) -> float:
        verts = self.vertices
        total = np.zeros(3)
        for i in range(1, len(verts) - 1):
            total += np.cross(verts[i] - verts[0], verts[i + 1] - verts[0])
        return float(np.linalg.norm(total)) / 2.0


class NavMesh:
    """Immutable collection of convex walkable polygons with adjacency."""

    def __init__(self, polygons, adjacency=()):
        self.polygons = [
            p if isinstance(p, ConvexPolygon) else ConvexPolygon(p) for p in polygons
        ]
        self.adjacency = [tuple(pair) for pair in adjacency]
        self._validate_adjacency()

    def __len__(self):
        return len(self.polygons)

    def _validate_adjacency(self):
        for a, b in self.adjacency:
            va = self.polygons[a].vertices
            vb = self.polygons[b].vertices
            shared = 0
            for x in va:
                if np.min(np.linalg.norm(vb - x, axis=1)) <= PLANARITY_TOL:
                    shared += 1
            if shared < 2:
                raise ValueError(f"adjacent polygons {a},{b} do not share an edge")

    def total_area(self) -> float:
        return sum(p.area() for p in self.polygons)

    def distance_to_mesh(self, p) -> float:
        """Exact minimum distance from p to the union of polygon surfaces."""
        if not self.polygons:
            raise RuntimeError("distance_to_mesh on an empty mesh")
        return min(poly.distance_to(p) for poly in self.polygons)

    def distances_to_mesh(self, points) -> np.ndarray:
        if not self.polygons:
            raise RuntimeError("distances_to_mesh on an empty mesh")
        pts = np.asarray(points, dtype=np.float64)
        best = np.full(len(pts), np.inf)
        for poly in self.polygons:
            np.minimum(best, poly.distances_to(pts), out=best)
        return best

    def classify_point(self, p) -> str:
        """NEAR_MESH within NEAR_MESH_RADIUS of the mesh, OFF_MESH beyond it."""
        return (
            PointClass.NEAR_MESH
            if self.distance_to_mesh(p) <= NEAR_MESH_RADIUS
            else PointClass.OFF_MESH
        )

    def classify_points(self, points) -> list:
        dists = self.distances_to_mesh(points)
        return [
            PointClass.NEAR_MESH if d <= NEAR_MESH_RADIUS else PointClass.OFF_MESH
            for d in dists
        ]


@dataclass
class Goal:
    """A target point sampled from the mesh; flips to reached exactly once."""

    position: Position
    reached_at: Optional[int] = None

    @property
    def reached(self) -> bool:
        return self.reached_at is not None


def _polygon_lattice(poly: ConvexPolygon, spacing: float):
    """Deterministic in-plane lattice over one polygon, boundary ticks included.

    Polygons smaller than the spacing in both in-plane extents contribute just
    their centroid so every polygon yields at least one candidate.
    """
    local = (poly.vertices - poly.centroid) @ np.stack([poly.u_axis, poly.v_axis]).T
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    extent = hi - lo
    if extent[0] < spacing and extent[1] < spacing:
        return [Position(*poly.centroid)]

    def ticks(a, b):
        vals = [a + i * spacing for i in range(int(math.floor((b - a) / spacing)) + 1)]
        if b - vals[-1] > 1e-9:
            vals.append(b)
        return vals

    out = []
    for u in ticks(lo[0], hi[0]):
        for v in ticks(lo[1], hi[1]):
            q = poly.centroid + u * poly.u_axis + v * poly.v_axis
            if poly.contains_projected(q, tol=1e-9):
                out.append(Position(*q))
    if not out:
        out.append(Position(*poly.centroid))
    return out


def sample_goals(mesh: NavMesh, spacing: float) -> list:
    """Sample goal points over the mesh surface.

    Lattice points are generated per polygon, then greedily thinned so no two
    kept goals are closer than spacing / 2.  Deterministic for a fixed mesh.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    min_sep = spacing / 2.0
    cell = min_sep
    kept: list = []
    grid: dict = {}
    for poly in mesh.polygons:
        for p in _polygon_lattice(poly, spacing):
            ci = (math.floor(p.x / cell), math.floor(p.y / cell), math.floor(p.z / cell))
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    for dk in (-1, 0, 1):
                        for q in grid.get((ci[0] + di, ci[1] + dj, ci[2] + dk), ()):
                            if math.dist(p, q) < min_sep:
                                ok = False
                                break
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                kept.append(Goal(p))
                grid.setdefault(ci, []).append(p)
    return kept


def drain(goals: list, p, t: int) -> int:
    """Mark every unreached goal within GOAL_DRAIN_RADIUS of p as reached at t."""
    count = 0
    for g in goals:
        if g.reached_at is None and math.dist(g.position, p) <= GOAL_DRAIN_RADIUS:
            g.reached_at = t
            count += 1
    return count


def distance_to_unreached(goals: list, p) -> float:
    """Minimum distance from p to any unreached goal; inf when none remain."""
    best = math.inf
    for g in goals:
        if g.reached_at is None:
            d = math.dist(g.position, p)
            if d < best:
                best = d
    return best


class GoalSet:
    """Goal bookkeeping tuned for per-step draining during a run.

    Goal positions never move, so they live in a 1 m grid hash for the drain
    check and in a KD-tree (rebuilt lazily after drains) for distance queries.
    """

    def __init__(self, goals: list):
        self.goals = list(goals)
        self._grid: dict = {}
        for i, g in enumerate(self.goals):
            key = self._key(g.position)
            self._grid.setdefault(key, []).append(i)
        self.reached_count = sum(1 for g in self.goals if g.reached)
        self._tree: Optional[cKDTree] = None
        self._tree_unreached: Optional[np.ndarray] = None
        self._dirty = True

    @staticmethod
    def _key(p):
        return (math.floor(p[0]), math.floor(p[1]), math.floor(p[2]))

    def __len__(self):
        return len(self.goals)

    @property
    def total(self) -> int:
        return len(self.goals)

    def drain(self, p, t: int) -> list:
        """Drain goals near p; returns the indices of newly reached goals."""
        x, y, z = p
        ci, cj, ck = math.floor(x), math.floor(y), math.floor(z)
        hit = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for dk in (-1, 0, 1):
                    for gi in self._grid.get((ci + di, cj + dj, ck + dk), ()):
                        g = self.goals[gi]
                        if g.reached_at is None:
                            gp = g.position
                            dx = gp[0] - x
                            dy = gp[1] - y
                            dz = gp[2] - z
                            if dx * dx + dy * dy + dz * dz <= GOAL_DRAIN_RADIUS**2:
                                g.reached_at = t
                                hit.append(gi)
        if hit:
            self.reached_count += len(hit)
            self._dirty = True
        return hit

    def _refresh_tree(self):
        idx = [i for i, g in enumerate(self.goals) if g.reached_at is None]
        if idx:
            pts = np.array([self.goals[i].position for i in idx])
            self._tree = cKDTree(pts)
            self._tree_unreached = np.array(idx)
        else:
            self._tree = None
            self._tree_unreached = None
        self._dirty = False

    def distance_to_unreached(self, p) -> float:
        if self._dirty:
            self._refresh_tree()
        if self._tree is None:
            return math.inf
        d, _ = self._tree.query(p)
        return float(d)

    def distances_to_unreached(self, points) -> tuple:
        """(distances, nearest unreached goal index) for many points at once."""
        if self._dirty:
            self._refresh_tree()
        pts = np.asarray(points, dtype=np.float64)
        if self._tree is None:
            return np.full(len(pts), np.inf), np.full(len(pts), -1, dtype=np.int64)
        d, j = self._tree.query(pts)
        return d, self._tree_unreached[j]


# -- file format -----------------------------------------------------------
#
# Line-oriented text, '#' starts a comment:
#   v x y z      vertex in meters
#   p i j k ...  convex polygon as zero-based vertex indices
#   a m n        optional adjacency between polygons m and n


def dumps_navmesh(mesh: NavMesh) -> str:
    verts: list = []
    vert_ids: dict = {}
    poly_lines = []
    for poly in mesh.polygons:
        ids = []
        for v in poly.vertices:
            key = (round(v[0], 9), round(v[1], 9), round(v[2], 9))
            if key not in vert_ids:
                vert_ids[key] = len(verts)
                verts.append(key)
            ids.append(vert_ids[key])
        poly_lines.append("p " + " ".join(str(i) for i in ids))
    lines = ["# navmesh: v x y z / p i j k ... / a m n"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts]
    lines += poly_lines
    lines += [f"a {m} {n}" for m, n in mesh.adjacency]
    return "\n".join(lines) + "\n"


def loads_navmesh(text: str) -> NavMesh:
    verts = []
    polys = []
    adj = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag == "v":
            if len(args) != 3:
                raise ValueError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append([float(a) for a in args])
        elif tag == "p":
            if len(args) < 3:
                raise ValueError(f"line {lineno}: polygon needs at least 3 indices")
            polys.append([int(a) for a in args])
        elif tag == "a":
            if len(args) != 2:
                raise ValueError(f"line {lineno}: adjacency needs 2 indices")
            adj.append((int(args[0]), int(args[1])))
        else:
            raise ValueError(f"line {lineno}: unknown record {tag!r}")
    varr = np.asarray(verts, dtype=np.float64)
    try:
        polygons = [varr[idx] for idx in polys]
    except IndexError as exc:
        raise ValueError(f"polygon references missing vertex: {exc}") from exc
    return NavMesh(polygons, adj)


def save_navmesh(mesh: NavMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_navmesh(mesh))


def load_navmesh(path) -> NavMesh:
    with open(path) as fh:
        return loads_navmesh(fh.read())
