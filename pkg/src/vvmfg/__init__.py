"""Vanishing-viscosity experiments for mean field games on the torus."""

from __future__ import annotations

__version__ = "0.1.0"

from .fixpoint import FixpointOptions, MfgProblem, MfgSolution, solve_mfg
from .grid import TimeGrid, TorusGrid
from .model import HamiltonianSpec, LocalCoupling, NonlocalCoupling

__all__ = [
    "FixpointOptions",
    "HamiltonianSpec",
    "LocalCoupling",
    "MfgProblem",
    "MfgSolution",
    "NonlocalCoupling",
    "TimeGrid",
    "TorusGrid",
    "solve_mfg",
]
