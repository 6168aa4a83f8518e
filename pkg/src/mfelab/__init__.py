"""Numerical laboratory for the two-parameter mean field equation on closed surfaces."""
from .errors import AssemblyError, ConvergenceError, MeshError, ResolutionError, ResourceLimitError
from .surface import SurfaceMesh, build_flat_torus, build_unit_volume_sphere, geodesic_distance, load_mesh
from .operators import DiscreteOperators, assemble, green_column, low_eigenpairs, solve_poisson
from .functional import MFEParams, energy, improved_mt_check, mt_check, neg_exp_moment, normalize_exp, residual
from .barycenter import (
    BarycenterMeasure,
    asymptotic_slopes,
    dist_to_barycenters,
    project_to_barycenters,
    test_function,
)
from .solver import MinMaxConfig, SolveReport, cone_point, continue_in_t, minimize, minmax_solve
from .concentration import ConcentrationReport, classify_concentration

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "ConvergenceError",
    "MeshError",
    "ResolutionError",
    "ResourceLimitError",
    "SurfaceMesh",
    "build_flat_torus",
    "build_unit_volume_sphere",
    "geodesic_distance",
    "load_mesh",
    "DiscreteOperators",
    "assemble",
    "green_column",
    "low_eigenpairs",
    "solve_poisson",
    "MFEParams",
    "energy",
    "improved_mt_check",
    "mt_check",
    "neg_exp_moment",
    "normalize_exp",
    "residual",
    "BarycenterMeasure",
    "asymptotic_slopes",
    "dist_to_barycenters",
    "project_to_barycenters",
    "test_function",
    "MinMaxConfig",
    "SolveReport",
    "cone_point",
    "continue_in_t",
    "minimize",
    "minmax_solve",
    "ConcentrationReport",
    "classify_concentration",
]
