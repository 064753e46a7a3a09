"""First-order mean field game solver for crowds with non-local repulsion."""

from .core import DensityField, Grid2D, MeasureCurve, MFGError, ParticleCloud, TimeGrid
from .hjb import ControlGrid, HjbOptions, solve_hjb_backward
from .mfgsolve import Grids, SolveConfig, Solution, picard_solve, solve_multi
from .model import CostParams, KernelParams, ModelParams

__all__ = [
    "ControlGrid",
    "CostParams",
    "DensityField",
    "Grid2D",
    "Grids",
    "HjbOptions",
    "KernelParams",
    "MFGError",
    "MeasureCurve",
    "ModelParams",
    "ParticleCloud",
    "SolveConfig",
    "Solution",
    "TimeGrid",
    "picard_solve",
    "solve_hjb_backward",
    "solve_multi",
]
