"""Shared 3D point type and distance helpers."""

from __future__ import annotations

import math
from typing import Iterable, NamedTuple


class Position(NamedTuple):
    """A point in the world, in meters."""

    x: float
    y: float
    z: float

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)


def distance(a: Iterable[float], b: Iterable[float]) -> float:
    """Euclidean distance between two 3D points."""
    ax, ay, az = a
    bx, by, bz = b
    return math.sqrt((ax - bx) ** 2 + (ay - by) ** 2 + (az - bz) ** 2)


def require_finite(p: Position) -> None:
    if not (math.isfinite(p[0]) and math.isfinite(p[1]) and math.isfinite(p[2])):
        raise ValueError(f"non-finite coordinates: {p!r}")
