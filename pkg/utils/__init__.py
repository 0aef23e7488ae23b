"""
Utilities for the coupled-SYK SRE suite.

This package provides:
- Runtime settings loaded from the environment / .env
- The damped fixed-point interface shared by the saddle solvers
"""

__version__ = "0.1.0"

from .solver_config import SolverSettings, get_settings
from .saddle_interface import DampedFixedPointSolver, IterationRecord, SolverDivergedError

__all__ = [
    "SolverSettings",
    "get_settings",
    "DampedFixedPointSolver",
    "IterationRecord",
    "SolverDivergedError",
]
