"""Posterior over the implicit function and the statistical queries on it.

Sign convention: the mean field is negative inside the reconstructed solid
and positive outside, so the occupancy probability is ``P(f <= 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from skimage.measure import marching_cubes

from ..exceptions import EmptyLevelSetError
from ..geometry import OrientedPointSet, TriangleMesh, sample_surface
from .grid import VoxelGrid, trilinear_matrix, trilinear_weights
from .normal_field import NormalFieldPosterior
from .poisson import RESIDUAL_TOL, divergence, divergence_adjoint, make_solver, solve_laplace_system

NEGATIVE_CLAMP = 1e-9
DEGENERATE_STD = 1e-12
VARIANCE_BATCH = 64


@dataclass(frozen=True, eq=False)
class SPSMapState:
    grid: VoxelGrid
    mean_field: np.ndarray
    iso_shift: float
    normal_field: NormalFieldPosterior
    solver: object = field(repr=False)
    residual: float = 0.0

    # --- pointwise queries -------------------------------------------------

    def mean(self, x):
        return query_mean(self, x)

    def variance(self, x):
        return query_variance(self, x)

    def occupancy(self, x):
        return occupancy_probability(self, x)

    def surface_density(self, x):
        return surface_probability(self, x)

    def gradient(self, x):
        """Trilinearly interpolated central-difference gradient of the mean."""
        grads = np.stack(np.gradient(self.mean_field, self.grid.spacing), axis=-1).reshape(-1, 3)
        single = np.ndim(x) == 1
        T = trilinear_matrix(np.atleast_2d(x), self.grid)
        out = T @ grads
        return out[0] if single else out

    def variance_field(self):
        """Per-node variance of the implicit function (one solve per node)."""
        return query_variance(self, self.grid.node_positions()).reshape(self.grid.shape)


def solve_poisson(normal_field: NormalFieldPosterior, grid: VoxelGrid = None, solver="dct",
                  tol=RESIDUAL_TOL, **solver_kwargs) -> SPSMapState:
    """Integrate the posterior mean normal field into an implicit function.

    The solution is mean-pinned, then shifted so that its average over the
    training samples is zero and the zero level set is the surface.
    """
    grid = normal_field.grid if grid is None else grid
    if isinstance(solver, str):
        solver = make_solver(grid, solver, **solver_kwargs)
    rhs = divergence(normal_field.field, grid.spacing)
    f, res = solve_laplace_system(rhs, grid, solver, tol)
    at_samples = trilinear_matrix(normal_field.samples.positions, grid) @ f.reshape(-1)
    shift = float(at_samples.mean())
    mean_field = f - shift
    mean_field.setflags(write=False)
    return SPSMapState(grid, mean_field, shift, normal_field, solver, float(res))


def _points(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


def query_mean(state: SPSMapState, x):
    single = np.ndim(x) == 1
    idx, w = trilinear_weights(_points(x), state.grid)
    out = np.sum(state.mean_field.reshape(-1)[idx] * w, axis=1)
    return float(out[0]) if single else out


def query_variance(state: SPSMapState, x):
    """Posterior variance of the implicit function at ``x``.

    One adjoint solve per point: ``w = L^+ e_x``, ``g = Z^T w`` and the
    variance is ``g^T K_V g``.
    """
    single = np.ndim(x) == 1
    pts = _points(x)
    grid = state.grid
    T = trilinear_matrix(pts, grid)
    out = np.empty(len(pts))
    for start in range(0, len(pts), VARIANCE_BATCH):
        stop = min(start + VARIANCE_BATCH, len(pts))
        embed = T[start:stop].T.toarray().reshape(grid.shape + (stop - start,))
        w = state.solver.solve(embed)
        g = divergence_adjoint(w, grid.spacing)
        out[start:stop] = state.normal_field.quad_form(g)
    out = np.where((out < 0) & (out >= -NEGATIVE_CLAMP), 0.0, out)
    return float(out[0]) if single else out


def _mean_std(state, x):
    mu = np.atleast_1d(query_mean(state, x))
    var = np.atleast_1d(query_variance(state, x))
    return mu, np.sqrt(np.maximum(var, 0.0))


def occupancy_probability(state: SPSMapState, x):
    """``P(f(x) <= 0)`` under the Gaussian posterior."""
    single = np.ndim(x) == 1
    mu, sd = _mean_std(state, x)
    out = occupancy_from_moments(mu, sd)
    return float(out[0]) if single else out


def occupancy_from_moments(mu, sd):
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    degenerate = sd < DEGENERATE_STD
    safe = np.where(degenerate, 1.0, sd)
    return np.where(degenerate, (mu <= 0).astype(float), norm.cdf(-mu / safe))


def surface_probability(state: SPSMapState, x):
    """Density of ``f(x)`` at zero.

    With vanishing variance this is ``inf`` on the exact level set and 0
    elsewhere.
    """
    single = np.ndim(x) == 1
    mu, sd = _mean_std(state, x)
    out = surface_from_moments(mu, sd)
    return float(out[0]) if single else out


def surface_from_moments(mu, sd):
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    degenerate = sd < DEGENERATE_STD
    safe = np.where(degenerate, 1.0, sd)
    return np.where(degenerate, np.where(mu == 0, np.inf, 0.0), norm.pdf(mu / safe) / safe)


def extract_mesh(state: SPSMapState) -> TriangleMesh:
    """Zero level set of the mean field as a triangle soup."""
    f = np.asarray(state.mean_field)
    if not (f.min() < 0 < f.max()):
        raise EmptyLevelSetError("the mean field does not cross zero inside the grid")
    h = state.grid.spacing
    verts, faces, _, _ = marching_cubes(f, level=0.0, spacing=(h, h, h))
    mesh = TriangleMesh(verts + state.grid.origin, faces)
    keep = mesh.face_areas > 0
    return TriangleMesh(mesh.vertices, mesh.faces[keep])


def extract_surface_points(state: SPSMapState, n: int, seed=None) -> OrientedPointSet:
    """Area-uniform samples of the zero level set, with normals along the
    mean-field gradient (pointing from negative to positive values)."""
    mesh = extract_mesh(state)
    if len(mesh) == 0:
        raise EmptyLevelSetError("the zero level set is empty")
    samples = sample_surface(mesh, n, seed)
    grad = state.gradient(samples.positions)
    length = np.linalg.norm(grad, axis=1, keepdims=True)
    ok = length[:, 0] > 0
    normals = np.where(ok[:, None], grad / np.where(ok[:, None], length, 1.0), samples.normals)
    return OrientedPointSet(samples.positions, normals)
