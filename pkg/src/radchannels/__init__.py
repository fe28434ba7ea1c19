"""Numerical toolkit for exterior energy channels of radial wave equations."""
from .radial_core import Dim, RadialGrid, Soliton, StatePair, eval_W, exterior_norm_sq, nonlinear_energy
from .pspace import PowerPair, TailedState, build_basis, gram, project

__all__ = [
    "Dim", "RadialGrid", "Soliton", "StatePair", "eval_W", "exterior_norm_sq", "nonlinear_energy",
    "PowerPair", "TailedState", "build_basis", "gram", "project",
]
__version__ = "0.1.0"
