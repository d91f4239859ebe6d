"""Numerical laboratory for radial NLS blow-up on warped-product manifolds."""

from .geometry import Manifold, RadialGrid, make_grid, make_manifold
from .weight import ThresholdReport, WeightFunction, build_weight
from .solver import Outcome, RunConfig, RunResult, WaveState, run
from .diagnostics import DiagnosticsRecord

__all__ = [
    "Manifold", "RadialGrid", "make_manifold", "make_grid",
    "WeightFunction", "ThresholdReport", "build_weight",
    "RunConfig", "RunResult", "WaveState", "Outcome", "run",
    "DiagnosticsRecord",
]

__version__ = "0.1.0"
