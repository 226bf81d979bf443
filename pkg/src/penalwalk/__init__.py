"""Penalisations of the simple symmetric random walk: exact laws, martingales and simulation."""

from .walk import Path, PenaltyWeight, WalkState, path_statistics, step_state

__all__ = ["Path", "PenaltyWeight", "WalkState", "path_statistics", "step_state"]
__version__ = "0.1.0"
