"""Numerics for polygonal multi-bubble configurations of critical Lane-Emden systems.

Modules: core (exponents, geometry, symmetry), radial (ground state and
auxiliary profiles), bubble (ansatz fields and phi), quad (Monte Carlo),
energy (expansion), norms (weighted norms), reduced (reduced landscape),
cli (command-line harness).
"""

from .core import CriticalPair, PolygonConfig, make_critical_pair
from .radial import GridOptions, GroundState, solve_ground_state, solve_w

__all__ = ["CriticalPair", "PolygonConfig", "make_critical_pair", "GridOptions", "GroundState",
           "solve_ground_state", "solve_w"]
__version__ = "0.1.0"
