"""Stochastic Poisson surface reconstruction on a regular lattice."""
from .estimator import StochasticPoissonSurface
from .grid import VoxelGrid, trilinear_weights
from .kernel import KernelConfig, LatticeKernel, build_kernel
from .normal_field import NormalFieldPosterior, fit_normal_field
from .state import (
    SPSMapState,
    extract_mesh,
    extract_surface_points,
    occupancy_probability,
    query_mean,
    query_variance,
    solve_poisson,
    surface_probability,
)

__all__ = [
    "KernelConfig",
    "LatticeKernel",
    "NormalFieldPosterior",
    "SPSMapState",
    "StochasticPoissonSurface",
    "VoxelGrid",
    "build_kernel",
    "extract_mesh",
    "extract_surface_points",
    "fit_normal_field",
    "occupancy_probability",
    "query_mean",
    "query_variance",
    "solve_poisson",
    "surface_probability",
    "trilinear_weights",
]
