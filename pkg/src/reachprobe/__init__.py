"""Reachability testing for simulated 3D game worlds.

Explores a world with a checkpoint-caching random explorer, compares what it
reaches against the navigation mesh, and reports likely reachability bugs.
"""

from .geometry import Position
from .spatial_cache import SpatialIndex

__version__ = "0.1.0"

__all__ = ["Position", "SpatialIndex", "__version__"]
