"""scikit-learn style front end for the reconstruction."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..geometry import OrientedPointSet
from .grid import VoxelGrid
from .kernel import KernelConfig, build_kernel
from .normal_field import fit_normal_field
from .state import (
    extract_mesh,
    extract_surface_points,
    occupancy_from_moments,
    query_mean,
    query_variance,
    solve_poisson,
    surface_from_moments,
)


def _check_points(X, name="X"):
    X = check_array(X, dtype=np.float64, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


class StochasticPoissonSurface(BaseEstimator):
    """Gaussian posterior over an implicit surface fitted to oriented points.

    Parameters
    ----------
    resolution : int, default=32
        Cells per axis of the lattice built around the training points.
    sigma_g : float, default=1.0
        Kernel variance scale.
    support_radius : int, default=1
        Width multiplier of the node bumps (1 or 2).
    padding : float, default=0.25
        Fraction of the largest bounding-box extent added on every side.
    grid : VoxelGrid, optional
        Explicit lattice; overrides ``resolution`` and ``padding``.
    solver : {"dct", "cg"}, default="dct"
        Poisson solver.

    Attributes
    ----------
    state_ : SPSMapState
        Fitted posterior.
    grid_ : VoxelGrid
    n_features_in_ : int

    Examples
    --------
    >>> est = StochasticPoissonSurface(resolution=16).fit(points, normals)  # doctest: +SKIP
    >>> est.occupancy_probability([[0.0, 0.0, 0.0]])  # doctest: +SKIP
    """

    def __init__(self, resolution=32, sigma_g=1.0, support_radius=1, padding=0.25, grid=None, solver="dct"):
        self.resolution = resolution
        self.sigma_g = sigma_g
        self.support_radius = support_radius
        self.padding = padding
        self.grid = grid
        self.solver = solver

    def fit(self, X, y):
        """Fit to positions ``X`` (n, 3) with outward normals ``y`` (n, 3)."""
        X = _check_points(X)
        N = _check_points(y, "y")
        if len(N) != len(X):
            raise ValueError("X and y must have the same number of rows")
        N = N / np.linalg.norm(N, axis=1, keepdims=True)
        grid = self.grid if self.grid is not None else VoxelGrid.fit_points(X, self.resolution, self.padding)
        kernel = build_kernel(grid, KernelConfig(self.sigma_g, self.support_radius))
        field = fit_normal_field(OrientedPointSet(X, N), grid, kernel=kernel)
        self.state_ = solve_poisson(field, solver=self.solver)
        self.grid_ = grid
        self.n_features_in_ = 3
        return self

    def predict(self, X, return_std=False):
        """Posterior mean of the implicit function (negative inside)."""
        check_is_fitted(self)
        X = _check_points(X)
        mu = query_mean(self.state_, X)
        if return_std:
            return mu, np.sqrt(np.maximum(query_variance(self.state_, X), 0.0))
        return mu

    def occupancy_probability(self, X):
        mu, sd = self.predict(X, return_std=True)
        return occupancy_from_moments(mu, sd)

    def surface_probability(self, X):
        mu, sd = self.predict(X, return_std=True)
        return surface_from_moments(mu, sd)

    def predict_proba(self, X):
        """Columns: probability of free space, probability of occupied."""
        p = self.occupancy_probability(X)
        return np.column_stack([1.0 - p, p])

    def sample_surface(self, n, random_state=None):
        check_is_fitted(self)
        return extract_surface_points(self.state_, n, random_state)

    def surface_mesh(self):
        check_is_fitted(self)
        return extract_mesh(self.state_)
