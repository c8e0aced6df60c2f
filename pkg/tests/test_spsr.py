import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from contactfusion.exceptions import (
    EmptyLevelSetError,
    EmptySetError,
    InputError,
    OutOfGridError,
    SolverError,
)
from contactfusion.geometry import OrientedPointSet
from contactfusion.spsr import (
    KernelConfig,
    StochasticPoissonSurface,
    VoxelGrid,
    build_kernel,
    extract_surface_points,
    fit_normal_field,
    occupancy_probability,
    query_mean,
    query_variance,
    solve_poisson,
    surface_probability,
    trilinear_weights,
)
from contactfusion.spsr.grid import quadratic_bspline
from contactfusion.spsr.poisson import (
    CGPoissonSolver,
    DCTPoissonSolver,
    divergence,
    gradient,
    laplacian,
    laplacian_matrix,
    relative_residual,
    solve_laplace_system,
)
from contactfusion.spsr.state import occupancy_from_moments, surface_from_moments

from .conftest import sphere_grid, sphere_samples

seeds = st.integers(0, 2**32 - 1)


def _inside(rng, grid, n, margin=0.0):
    lo = grid.origin + margin
    hi = grid.upper - margin
    return lo + (hi - lo) * rng.random((n, 3))


# --- independent kernel oracle ------------------------------------------------------

def _bspline_oracle(t):
    # quadratic B-spline with half-width 1.5, scaled to 1 at the center
    t = abs(t)
    if t < 0.5:
        v = 0.75 - t * t
    elif t < 1.5:
        v = 0.5 * (1.5 - t) ** 2
    else:
        v = 0.0
    return v / 0.75


def _corners(x, grid):
    u = (np.asarray(x) - grid.origin) / grid.spacing
    base = np.minimum(np.floor(u).astype(int), grid.resolution - 1)
    frac = u - base
    out = []
    for c in itertools.product((0, 1), repeat=3):
        w = np.prod([frac[a] if c[a] else 1 - frac[a] for a in range(3)])
        out.append((tuple(base + c), w))
    return out


def _kpsr_oracle(x, y, grid, sigma=1.0, s=1):
    """sigma * sum_o alpha_{o,x} F_o(y), F_o interpolated from its node samples."""
    total = 0.0
    for o, wx in _corners(x, grid):
        F = 0.0
        for o2, wy in _corners(y, grid):
            F += wy * np.prod([_bspline_oracle((o2[a] - o[a]) / s) for a in range(3)])
        total += wx * F
    return sigma * total


def test_bspline_matches_oracle():
    t = np.linspace(-2, 2, 81)
    assert np.allclose(quadratic_bspline(t), [_bspline_oracle(v) for v in t], atol=1e-15)
    assert quadratic_bspline(0.0) == 1.0


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_kernel_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(6, [0.0, 0.0, 0.0], 0.5)
    k = build_kernel(grid, KernelConfig(sigma_g=1.7))
    x, y = _inside(rng, grid, 2)
    y = x + rng.uniform(-1.2, 1.2, 3)
    y = np.clip(y, grid.origin, grid.upper)
    sym = 0.5 * (_kpsr_oracle(x, y, grid, 1.7) + _kpsr_oracle(y, x, grid, 1.7))
    assert k(x, y) == pytest.approx(sym, abs=1e-13)
    assert k.psr(x, y) == pytest.approx(_kpsr_oracle(x, y, grid, 1.7), abs=1e-13)


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_kernel_symmetric_exactly(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(8, [-1, -1, -1], 0.25)
    k = build_kernel(grid)
    x, y = _inside(rng, grid, 2)
    assert k(x, y) == k(y, x)


def test_kernel_at_node_equals_sigma():
    grid = VoxelGrid(8, [0, 0, 0], 0.1)
    k = build_kernel(grid, KernelConfig(sigma_g=2.5))
    node = grid.origin + grid.spacing * np.array([3, 4, 5])
    assert k(node, node) == pytest.approx(2.5, abs=1e-14)


def test_kernel_compact_support():
    rng = np.random.default_rng(0)
    grid = VoxelGrid(16, [0, 0, 0], 0.1)
    for s in (1, 2):
        k = build_kernel(grid, KernelConfig(support_radius=s))
        for _ in range(300):
            x = _inside(rng, grid, 1)[0]
            step = rng.normal(size=3)
            step = step / np.abs(step).max() * (k.reach * (1 + rng.random()))
            y = x + step
            if grid.contains(y[None])[0]:
                assert k(x, y) == 0.0


@pytest.mark.parametrize("s", [1, 2])
def test_gram_positive_semidefinite(s):
    rng = np.random.default_rng(s)
    grid = VoxelGrid(8, [0, 0, 0], 0.125)
    k = build_kernel(grid, KernelConfig(support_radius=s))
    X = _inside(rng, grid, 200)
    G = k.gram(X)
    assert np.array_equal(G, G.T) or np.allclose(G, G.T, atol=1e-15)
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    assert ev.min() >= -1e-8 * ev.max()
    # the explicit symmetrized pairwise form agrees with the matrix
    i, j = rng.integers(0, 200, size=(2, 50))
    assert np.allclose(k(X[i], X[j]), G[i, j], atol=1e-14)


def test_kernel_config_validation():
    with pytest.raises(InputError):
        KernelConfig(sigma_g=0.0)
    with pytest.raises(InputError):
        KernelConfig(support_radius=0)
    with pytest.raises(InputError):
        KernelConfig(support_radius=3)


# --- grid and trilinear weights ---------------------------------------------------------

def test_grid_validation_and_fit():
    with pytest.raises(InputError):
        VoxelGrid(3, [0, 0, 0], 1.0)
    with pytest.raises(InputError):
        VoxelGrid(8, [0, 0, 0], 0.0)
    pts = sphere_samples(200).positions
    g = VoxelGrid.fit_points(pts, 32)
    assert np.all(g.contains(pts, margin=2.0))
    assert np.all(g.upper - g.origin <= 3.2)


def test_trilinear_examples():
    grid = VoxelGrid(4, [0, 0, 0], 1.0)
    idx, w = trilinear_weights(np.array([1.0, 2.0, 3.0]), grid)
    assert w.max() == 1.0 and np.sum(w == 1.0) == 1 and np.sum(w) == 1.0
    assert idx[np.argmax(w)] == grid.flat_index(1, 2, 3)
    _, w = trilinear_weights(np.array([1.5, 2.5, 0.5]), grid)
    assert np.allclose(w, 0.125)
    with pytest.raises(OutOfGridError):
        trilinear_weights(np.array([4.5, 0, 0]), grid)


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_trilinear_reproduces_point(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(7, rng.normal(size=3), 0.3)
    x = _inside(rng, grid, 20)
    idx, w = trilinear_weights(x, grid)
    nodes = grid.node_positions().reshape(-1, 3)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.einsum("nk,nkd->nd", w, nodes[idx]), x, atol=1e-12)


# --- normal field -------------------------------------------------------------------

def test_normal_field_single_direction():
    rng = np.random.default_rng(0)
    grid = sphere_grid(12)
    pts = rng.uniform(-0.8, 0.8, (300, 3))
    field = fit_normal_field(OrientedPointSet(pts, np.tile([0, 0, 1.0], (300, 1))), grid)
    assert np.allclose(field.field[..., :2], 0.0)
    assert np.all(field.field[..., 2] >= 0)
    assert np.all(field.weights > 0)


def test_normal_field_covariance_nonnegative(small_sphere_state):
    nf = small_sphere_state.normal_field
    rng = np.random.default_rng(1)
    x = _inside(rng, nf.grid, 1000)
    assert np.all(nf.covariance(x, x) >= -1e-9)


def test_normal_field_far_field(small_sphere_state):
    nf = small_sphere_state.normal_field
    k = nf.kernel
    far = np.array([[1.45, 1.45, 1.45], [-1.45, 1.4, -1.45]])
    assert np.allclose(nf.mean(far), 0.0)
    assert np.allclose(nf.covariance(far, far), k(far, far), atol=1e-12)


def test_normal_field_mean_matches_definition(small_sphere_state):
    nf = small_sphere_state.normal_field
    S = nf.samples
    rng = np.random.default_rng(2)
    x = _inside(rng, nf.grid, 30, margin=0.3)
    G = nf.kernel.gram(S.positions)
    D = G.sum(axis=1)
    assert np.allclose(nf.weights, D, rtol=1e-12)
    Kx = nf.kernel.gram(x, S.positions)
    assert np.allclose(nf.mean(x), Kx @ (S.normals / D[:, None]), atol=1e-12)


def test_normal_field_errors():
    grid = sphere_grid(12)
    with pytest.raises(EmptySetError):
        fit_normal_field(OrientedPointSet.empty(), grid)
    with pytest.raises(InputError):
        fit_normal_field(sphere_samples(5), grid)
    far = sphere_samples(50)
    with pytest.raises(OutOfGridError):
        fit_normal_field(OrientedPointSet(far.positions * 1.48, far.normals), grid)


# --- Poisson ------------------------------------------------------------------------

def test_laplacian_operator_matches_matrix():
    grid = VoxelGrid(6, [0, 0, 0], 0.2)
    f = np.random.default_rng(0).normal(size=grid.shape)
    L = laplacian_matrix(grid)
    assert np.allclose(L @ f.reshape(-1), laplacian(f, grid.spacing).reshape(-1), atol=1e-9)
    # Z G = L with G the forward difference and Z the flux divergence
    assert np.allclose(divergence(gradient(f, grid.spacing), grid.spacing), laplacian(f, grid.spacing))


@pytest.mark.parametrize("solver", [DCTPoissonSolver, CGPoissonSolver])
def test_manufactured_solution(solver):
    grid = VoxelGrid(20, [0, 0, 0], 1 / 20)
    X, Y, Z = np.moveaxis(grid.node_positions().reshape(grid.shape + (3,)), -1, 0)
    g = np.sin(2 * X) * np.cos(3 * Y) + Z ** 2 * X
    rhs = divergence(gradient(g, grid.spacing), grid.spacing)
    f, res = solve_laplace_system(rhs, grid, solver(grid))
    assert res <= 1e-8
    a, b = f - f.mean(), g - g.mean()
    assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-6


def test_solvers_agree_on_random_rhs():
    grid = VoxelGrid(10, [0, 0, 0], 0.1)
    rhs = np.random.default_rng(3).normal(size=grid.shape)
    a = DCTPoissonSolver(grid).solve(rhs)
    b = CGPoissonSolver(grid).solve(rhs)
    assert np.allclose(a, b, atol=1e-8 * np.abs(a).max())
    assert abs(a.mean()) < 1e-12
    assert relative_residual(a, rhs - rhs.mean(), grid.spacing) < 1e-10


def test_solver_failure_raises():
    grid = VoxelGrid(10, [0, 0, 0], 0.1)
    rhs = np.random.default_rng(3).normal(size=grid.shape)
    with pytest.raises(SolverError):
        solve_laplace_system(rhs, grid, CGPoissonSolver(grid, max_iter=2))


def test_zero_field_gives_zero_function(small_sphere_state):
    nf = small_sphere_state.normal_field
    zero = dataclasses.replace(nf, field=np.zeros_like(nf.field))
    state = solve_poisson(zero)
    assert np.all(state.mean_field == 0.0)


# --- sphere fixture -------------------------------------------------------------------

def test_sphere_sign_convention(sphere_state):
    f = sphere_state.mean_field
    assert query_mean(sphere_state, [0.0, 0.0, 0.0]) < 0
    corners = [[s1 * 1.5, s2 * 1.5, s3 * 1.5] for s1 in (-1, 1) for s2 in (-1, 1) for s3 in (-1, 1)]
    assert np.all(query_mean(sphere_state, np.array(corners)) > 0)
    assert f[0, 0, 0] > 0
    inside = occupancy_probability(sphere_state, np.array([[0.0, 0, 0], [0.3, 0.2, -0.1]]))
    outside = occupancy_probability(sphere_state, np.array([[1.4, 1.4, 1.4], [-1.3, 1.3, 1.0]]))
    assert np.all(inside > 0.5) and np.all(outside < 0.5)


def test_sphere_invariants(sphere_state, sphere_cloud):
    assert sphere_state.residual <= 1e-8
    assert abs(np.mean(query_mean(sphere_state, sphere_cloud.positions))) <= 1e-6


def test_query_mean_at_nodes_and_midpoints(sphere_state):
    grid = sphere_state.grid
    f = sphere_state.mean_field
    node = grid.origin + grid.spacing * np.array([10, 11, 12])
    assert query_mean(sphere_state, node) == f[10, 11, 12]
    mid = node + [0.5 * grid.spacing, 0, 0]
    assert query_mean(sphere_state, mid) == pytest.approx(0.5 * (f[10, 11, 12] + f[11, 11, 12]), abs=1e-15)


def test_sphere_surface_points(sphere_state):
    pts = extract_surface_points(sphere_state, 2000, seed=0)
    r = np.linalg.norm(pts.positions, axis=1)
    assert np.mean(np.abs(r - 1)) < 0.05
    # normals follow the gradient outward
    assert np.mean(np.sum(pts.normals * pts.positions / r[:, None], axis=1)) > 0.99
    again = extract_surface_points(sphere_state, 2000, seed=0)
    assert np.array_equal(pts.positions, again.positions)


def test_empty_level_set(small_sphere_state):
    shifted = dataclasses.replace(small_sphere_state, mean_field=np.abs(small_sphere_state.mean_field) + 1.0)
    with pytest.raises(EmptyLevelSetError):
        extract_surface_points(shifted, 10)


def test_query_outside_grid(sphere_state):
    with pytest.raises(OutOfGridError):
        query_mean(sphere_state, [2.0, 0, 0])
    with pytest.raises(OutOfGridError):
        query_variance(sphere_state, [0, -1.6, 0])


# --- variance ---------------------------------------------------------------------

def _dense_variance_oracle(state, x):
    """t_x^T L^+ Z K_V Z^T L^+ t_x from explicit dense matrices."""
    grid = state.grid
    nf = state.normal_field
    n = grid.n_nodes
    L = laplacian_matrix(grid).toarray()
    Lp = np.linalg.pinv(L)
    # Z as a dense matrix acting on stacked edge components
    cols = []
    edge_pos = []
    for a in range(3):
        mask = grid.edge_mask(a).reshape(-1)
        pos = grid.edge_positions(a)
        for j in np.flatnonzero(mask):
            V = np.zeros(grid.shape + (3,))
            V.reshape(-1, 3)[j, a] = 1.0
            cols.append(divergence(V, grid.spacing).reshape(-1))
        edge_pos.append(pos)
    Z = np.array(cols).T
    S = nf.samples.positions
    k = nf.kernel
    blocks = []
    for a in range(3):
        E = edge_pos[a]
        KE = k.gram(E)
        KES = k.gram(E, S)
        blocks.append(KE - KES @ np.diag(1.0 / nf.weights) @ KES.T)
    sizes = [len(b) for b in blocks]
    KV = np.zeros((sum(sizes), sum(sizes)))
    off = 0
    for b in blocks:
        KV[off:off + len(b), off:off + len(b)] = b
        off += len(b)
    from contactfusion.spsr.grid import trilinear_matrix

    T = trilinear_matrix(x, grid).toarray()
    A = T @ Lp @ Z
    assert A.shape[1] == KV.shape[0] and Lp.shape == (n, n)
    return np.einsum("ij,jk,ik->i", A, KV, A)


def test_variance_matches_dense_oracle():
    cloud = sphere_samples(150, seed=9, radius=0.7)
    grid = VoxelGrid(8, [-1.5, -1.5, -1.5], 0.375)
    state = solve_poisson(fit_normal_field(cloud, grid))
    x = _inside(np.random.default_rng(0), grid, 12)
    oracle = _dense_variance_oracle(state, x)
    got = query_variance(state, x)
    assert np.allclose(got, np.maximum(oracle, 0), rtol=1e-8, atol=1e-12)


def test_variance_nonnegative(small_sphere_state):
    x = _inside(np.random.default_rng(4), small_sphere_state.grid, 500)
    assert np.all(query_variance(small_sphere_state, x) >= 0)


def test_variance_lower_in_dense_region():
    # samples only on the lower half of the sphere; the upper far field is data-free
    cloud = sphere_samples(1500, seed=5)
    lower = cloud.subset(cloud.positions[:, 2] < -0.2)
    state = solve_poisson(fit_normal_field(lower, sphere_grid(16)))
    near = query_variance(state, [0.0, 0.0, -1.0])
    far = query_variance(state, [0.0, 0.0, 1.3])
    assert near < far


def test_variance_with_duplicated_samples(small_sphere_state):
    nf = small_sphere_state.normal_field
    doubled = OrientedPointSet.concatenate([nf.samples, nf.samples])
    state2 = solve_poisson(fit_normal_field(doubled, nf.grid))
    x = _inside(np.random.default_rng(5), nf.grid, 20, margin=0.5)
    v1 = query_variance(small_sphere_state, x)
    v2 = query_variance(state2, x)
    assert np.all(np.isfinite(v2)) and np.all(v2 >= 0)
    assert np.allclose(state2.normal_field.weights[: len(nf.samples)], 2 * nf.weights)
    ratio = (v2 + 1e-12) / (v1 + 1e-12)
    assert np.all((ratio > 0.1) & (ratio < 10))


# --- occupancy and surface density ----------------------------------------------------

def test_occupancy_from_moments_examples():
    assert occupancy_from_moments(0.0, 0.3) == 0.5
    assert occupancy_from_moments(-0.9, 0.3) == pytest.approx(norm.cdf(3.0), abs=1e-12)
    assert occupancy_from_moments(-1e-3, 0.0) == 1.0 and occupancy_from_moments(1e-3, 0.0) == 0.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 3))
def test_occupancy_monotone_in_mean(a, b, sd):
    if a < b:
        pa, pb = occupancy_from_moments(a, sd), occupancy_from_moments(b, sd)
        assert pa >= pb
        if pb > 1e-12 and pa < 1 - 1e-12 and b - a > 1e-9:
            assert pa > pb


def test_surface_density_examples():
    sd = 0.2
    assert surface_from_moments(0.0, sd) == pytest.approx(1 / (sd * np.sqrt(2 * np.pi)))
    assert surface_from_moments(3.0, 0.1) < 1e-8
    assert surface_from_moments(0.0, 0.0) == np.inf and surface_from_moments(0.1, 0.0) == 0.0


def test_surface_density_peaks_near_radius(small_sphere_state):
    h = small_sphere_state.grid.spacing
    direction = np.array([1.0, 2.0, 2.0]) / 3.0
    r = np.linspace(0.5, 1.4, 91)
    dens = surface_probability(small_sphere_state, r[:, None] * direction)
    assert abs(r[np.argmax(dens)] - 1.0) <= h


# --- estimator -------------------------------------------------------------------------

def test_estimator_api(sphere_cloud):
    est = StochasticPoissonSurface(resolution=16)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict([[0, 0, 0]])
    est.fit(sphere_cloud.positions, sphere_cloud.normals * 2.0)
    mu, sd = est.predict([[0, 0, 0], [1.3, 1.3, 1.3]], return_std=True)
    assert mu[0] < 0 < mu[1] and np.all(sd > 0)
    proba = est.predict_proba([[0, 0, 0]])
    assert proba.shape == (1, 2) and proba.sum() == pytest.approx(1.0)
    assert len(est.sample_surface(100, random_state=0)) == 100
    assert est.n_features_in_ == 3
    with pytest.raises(ValueError):
        est.predict([[0, 0]])
    with pytest.raises(ValueError):
        StochasticPoissonSurface().fit(sphere_cloud.positions, sphere_cloud.normals[:10])


def test_estimator_matches_functional_api(sphere_cloud, sphere_state):
    est = StochasticPoissonSurface(grid=sphere_grid(32)).fit(sphere_cloud.positions, sphere_cloud.normals)
    assert np.allclose(est.state_.mean_field, sphere_state.mean_field, atol=1e-12)
