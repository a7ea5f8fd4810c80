"""Robust investment and risk-control game of an insurer with insider information.

Closed-form strategies and values, path simulation under enlarged
filtrations, BSDE solvers and a Monte Carlo saddle-point oracle.
"""
from .errors import GameError
from .scenario import Scenario, load_scenario, validate

__all__ = ["GameError", "Scenario", "load_scenario", "validate"]
__version__ = "0.1.0"
