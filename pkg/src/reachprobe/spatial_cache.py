"""Cache of discovered positions with min-distance insertion and nearest queries.

The cache keeps every stored point strictly more than ``threshold_k`` meters
from every other stored point, so the stored set forms a covering net over
visited space.  A uniform grid hash with cell size ``threshold_k`` makes the
novelty check touch at most the 27 cells around a candidate, and nearest
queries expand outward shell by shell, which keeps both operations well under
a millisecond even with hundreds of thousands of entries.
"""

from __future__ import annotations

import math
import threading
from typing import NamedTuple, Optional

import numpy as np

from .geometry import Position


class EntryView(NamedTuple):
    """Immutable snapshot of one cached entry."""

    id: int
    position: Position
    visit_count: int
    first_seen: int


class SpatialIndex:
    """Thread-safe set of discovered positions with visitation counts.

    All mutation happens under one lock, so the distance check and the
    insertion of :meth:`insert_if_novel` are a single atomic step.
    """

    def __init__(self, threshold_k: float, initial_capacity: int = 1024):
        if not (threshold_k > 0 and math.isfinite(threshold_k)):
            raise ValueError(f"threshold_k must be positive and finite, got {threshold_k}")
        self.threshold_k = float(threshold_k)
        self._k2 = self.threshold_k * self.threshold_k
        self._lock = threading.Lock()
        self._size = 0
        self._positions = np.empty((initial_capacity, 3), dtype=np.float64)
        self._visits = np.empty(initial_capacity, dtype=np.int64)
        self._first_seen = np.empty(initial_capacity, dtype=np.int64)
        self._checkpoints: list = []
        # (i, j, k) cell -> list of entry ids in that cell
        self._cells: dict = {}
        self._cell_min = [0, 0, 0]
        self._cell_max = [0, 0, 0]

    def __len__(self) -> int:
        return self._size

    @property
    def size(self) -> int:
        return self._size

    # -- internals ---------------------------------------------------------

    def _cell_of(self, x: float, y: float, z: float) -> tuple:
        k = self.threshold_k
        return (math.floor(x / k), math.floor(y / k), math.floor(z / k))

    def _grow(self) -> None:
        cap = len(self._visits) * 2
        self._positions = np.resize(self._positions, (cap, 3))
        self._visits = np.resize(self._visits, cap)
        self._first_seen = np.resize(self._first_seen, cap)

    def _store(self, x: float, y: float, z: float, checkpoint, t: int) -> int:
        eid = self._size
        if eid == len(self._visits):
            self._grow()
        self._positions[eid, 0] = x
        self._positions[eid, 1] = y
        self._positions[eid, 2] = z
        self._visits[eid] = 1
        self._first_seen[eid] = t
        self._checkpoints.append(checkpoint)
        cell = self._cell_of(x, y, z)
        bucket = self._cells.get(cell)
        if bucket is None:
            self._cells[cell] = [eid]
        else:
            bucket.append(eid)
        if self._size == 0:
            self._cell_min = list(cell)
            self._cell_max = list(cell)
        else:
            for axis in range(3):
                if cell[axis] < self._cell_min[axis]:
                    self._cell_min[axis] = cell[axis]
                if cell[axis] > self._cell_max[axis]:
                    self._cell_max[axis] = cell[axis]
        self._size = eid + 1
        return eid

    def _too_close(self, x: float, y: float, z: float) -> bool:
        """True if some stored point is within threshold_k (inclusive) of p."""
        cells = self._cells
        pos = self._positions
        k2 = self._k2
        ci, cj, ck = self._cell_of(x, y, z)
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                for dk in (0, -1, 1):
                    bucket = cells.get((ci + di, cj + dj, ck + dk))
                    if bucket is None:
                        continue
                    for eid in bucket:
                        row = pos[eid]
                        dx = row[0] - x
                        dy = row[1] - y
                        dz = row[2] - z
                        if dx * dx + dy * dy + dz * dz <= k2:
                            return True
        return False

    def _nearest(self, x: float, y: float, z: float) -> tuple:
        """Return (entry id, distance); (-1, inf) when empty.

        Expanding shell search over the grid.  After scanning Chebyshev shells
        0..R around the query cell, any unscanned point is farther than
        R * threshold_k, so the search stops once the best candidate beats
        that bound.  Exact-distance ties resolve to the lowest id.
        """
        if self._size == 0:
            return -1, math.inf
        cells = self._cells
        pos = self._positions
        k = self.threshold_k
        ci, cj, ck = self._cell_of(x, y, z)
        r_max = 0
        for axis, c in enumerate((ci, cj, ck)):
            r_max = max(r_max, abs(c - self._cell_min[axis]), abs(c - self._cell_max[axis]))
        best_d2 = math.inf
        best_id = -1
        for radius in range(r_max + 1):
            lo_i, hi_i = ci - radius, ci + radius
            lo_j, hi_j = cj - radius, cj + radius
            lo_k, hi_k = ck - radius, ck + radius
            for i in range(lo_i, hi_i + 1):
                on_face_i = i == lo_i or i == hi_i
                for j in range(lo_j, hi_j + 1):
                    on_face_ij = on_face_i or j == lo_j or j == hi_j
                    if on_face_ij:
                        k_range = range(lo_k, hi_k + 1)
                    else:
                        k_range = (lo_k, hi_k) if radius > 0 else (lo_k,)
                    for kk in k_range:
                        bucket = cells.get((i, j, kk))
                        if bucket is None:
                            continue
                        for eid in bucket:
                            row = pos[eid]
                            dx = row[0] - x
                            dy = row[1] - y
                            dz = row[2] - z
                            d2 = dx * dx + dy * dy + dz * dz
                            if d2 < best_d2 or (d2 == best_d2 and eid < best_id):
                                best_d2 = d2
                                best_id = eid
            if best_id >= 0 and best_d2 <= (radius * k) ** 2:
                break
        return best_id, math.sqrt(best_d2)

    # -- public operations -------------------------------------------------

    def insert_if_novel(self, p: Position, checkpoint, t: int) -> Optional[int]:
        """Store p when it is farther than threshold_k from every entry.

        Returns the new entry id, or None when p fell within threshold_k
        (inclusive) of an existing entry.  The stored entry starts with
        visit_count 1, first_seen t, and keeps the given checkpoint forever.
        """
        x, y, z = p
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise ValueError(f"non-finite coordinates: {p!r}")
        if t < 0:
            raise ValueError(f"timestep must be non-negative, got {t}")
        with self._lock:
            if self._size and self._too_close(x, y, z):
                return None
            return self._store(x, y, z, checkpoint, t)

    def insert(self, p: Position, checkpoint, t: int) -> int:
        """Store p unconditionally, bypassing the novelty threshold.

        Exists for goal-claiming positions: the explorer caches the exact
        position that drained a goal even when a neighbor already sits
        within threshold_k, so every reached goal keeps a witnessing entry
        inside the drain radius.
        """
        x, y, z = p
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise ValueError(f"non-finite coordinates: {p!r}")
        if t < 0:
            raise ValueError(f"timestep must be non-negative, got {t}")
        with self._lock:
            return self._store(x, y, z, checkpoint, t)

    def nearest_distance(self, p: Position) -> float:
        """Exact minimum distance from p to any entry; inf when empty."""
        x, y, z = p
        with self._lock:
            return self._nearest(x, y, z)[1]

    def record_visit(self, p: Position) -> int:
        """Bump the visit count of the entry nearest to p and return its id."""
        x, y, z = p
        with self._lock:
            if self._size == 0:
                raise RuntimeError("record_visit on an empty index")
            eid, _ = self._nearest(x, y, z)
            self._visits[eid] += 1
            return eid

    def checkpoint_of(self, entry_id: int):
        with self._lock:
            return self._checkpoints[entry_id]

    def snapshot_entries(self) -> list:
        """Point-in-time list of EntryView, ordered by id."""
        with self._lock:
            n = self._size
            pos = self._positions[:n].copy()
            visits = self._visits[:n].copy()
            first = self._first_seen[:n].copy()
        return [
            EntryView(i, Position(pos[i, 0], pos[i, 1], pos[i, 2]), int(visits[i]), int(first[i]))
            for i in range(n)
        ]

    def snapshot_arrays(self) -> tuple:
        """(positions, visit_counts, first_seen) copies for vectorized work."""
        with self._lock:
            n = self._size
            return (
                self._positions[:n].copy(),
                self._visits[:n].copy(),
                self._first_seen[:n].copy(),
            )
