"""Adaptive refinement loops for Poisson, obstacle and single layer problems,
with numerical audits of estimator stability and reduction."""

from .errors import ConfigError, EstconvError, InputError, PreconditionError, SolverError
from .marking import IndicatorField, MarkingConfig
from .mesh2d import Mesh2D, RefinementMap, make_initial_mesh, refine_nvb
from .boundary_mesh import BoundaryMesh, make_boundary_mesh, refine_boundary
from .driver import RunConfig, estimate_rate, run_adaptive

__version__ = "0.1.0"

__all__ = [
    "BoundaryMesh", "ConfigError", "EstconvError", "IndicatorField", "InputError",
    "MarkingConfig", "Mesh2D", "PreconditionError", "RefinementMap", "RunConfig", "SolverError",
    "estimate_rate", "make_boundary_mesh", "make_initial_mesh", "refine_boundary", "refine_nvb",
    "run_adaptive",
]
