"""Discrete divergence, gradient and Neumann Laplacian on the node lattice,
and two interchangeable solvers for the singular Poisson system.

Operators (``h`` the spacing, fields staggered as in ``normal_field``)::

    (Z V)[n]   = sum_a (V_a[n] - V_a[n - e_a]) / h     zero flux outside
    (G f)_a[n] = (f[n + e_a] - f[n]) / h               = -(Z^T f)_a[n]
    L          = Z G                                   7-point, zero-Neumann

so ``L`` is exactly the composition of the divergence with the gradient and
a gradient field is reproduced to rounding error.
"""
from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..exceptions import SolverError
from .grid import VoxelGrid

RESIDUAL_TOL = 1e-8


def _shift_slices(axis, ndim, lo, hi):
    idx = [slice(None)] * ndim
    idx[axis] = slice(lo, hi)
    return tuple(idx)


def divergence(V, spacing):
    """Node scalar field from a staggered vector field (..., 3)."""
    V = np.asarray(V, dtype=float)
    out = np.zeros(V.shape[:3] + V.shape[4:])
    for a in range(3):
        Va = V[:, :, :, a]
        out[_shift_slices(a, out.ndim, 0, -1)] += Va[_shift_slices(a, Va.ndim, 0, -1)]
        out[_shift_slices(a, out.ndim, 1, None)] -= Va[_shift_slices(a, Va.ndim, 0, -1)]
    return out / spacing


def divergence_adjoint(w, spacing):
    """``Z^T w``: staggered edge field of shape (K+1, K+1, K+1, 3[, m])."""
    w = np.asarray(w, dtype=float)
    g = np.zeros(w.shape[:3] + (3,) + w.shape[3:])
    for a in range(3):
        ga = w[_shift_slices(a, w.ndim, 0, -1)] - w[_shift_slices(a, w.ndim, 1, None)]
        g[:, :, :, a][_shift_slices(a, w.ndim, 0, -1)] = ga
    return g / spacing


def gradient(f, spacing):
    """Forward-difference gradient on lattice edges (staggered)."""
    return -divergence_adjoint(f, spacing)


def laplacian(f, spacing):
    return divergence(gradient(f, spacing), spacing)


def laplacian_matrix(grid: VoxelGrid):
    """Sparse ``L`` (negative semi-definite) in flat C node order."""
    n = grid.resolution + 1
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    one_d = -(d.T @ d) / grid.spacing ** 2
    eye = sp.identity(n)
    return (sp.kron(sp.kron(one_d, eye), eye) + sp.kron(sp.kron(eye, one_d), eye)
            + sp.kron(sp.kron(eye, eye), one_d)).tocsr()


def _project(rhs):
    """Remove the per-column node mean so ``rhs`` lies in the range of L."""
    return rhs - rhs.mean(axis=(0, 1, 2), keepdims=True)


class DCTPoissonSolver:
    """Exact solve by diagonalization in the DCT-II basis.

    The zero-Neumann 7-point Laplacian on a box is diagonal in that basis,
    so the pseudo-inverse with mean-zero normalization is three transforms
    and a division.  ``solve`` accepts a trailing batch axis.
    """

    name = "dct"

    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        n = grid.resolution + 1
        lam = -(2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)) / grid.spacing ** 2
        eig = lam[:, None, None] + lam[None, :, None] + lam[None, None, :]
        eig[0, 0, 0] = 1.0
        self._inv = 1.0 / eig
        self._inv[0, 0, 0] = 0.0

    def solve(self, rhs):
        rhs = _project(np.asarray(rhs, dtype=float))
        coef = scipy.fft.dctn(rhs, type=2, axes=(0, 1, 2), norm="ortho")
        inv = self._inv if rhs.ndim == 3 else self._inv[..., None]
        return scipy.fft.idctn(coef * inv, type=2, axes=(0, 1, 2), norm="ortho")


class CGPoissonSolver:
    """Jacobi-preconditioned conjugate gradients on ``-L``."""

    name = "cg"

    def __init__(self, grid: VoxelGrid, tol=1e-10, max_iter=None):
        self.grid = grid
        self.tol = tol
        self.max_iter = max_iter if max_iter is not None else 10 * grid.n_nodes
        self._A = -laplacian_matrix(grid)
        self._M = sp.diags(1.0 / self._A.diagonal())

    def _solve_one(self, b):
        if not np.any(b):
            return np.zeros_like(b)
        x, info = spla.cg(self._A, b, rtol=self.tol, atol=0.0, maxiter=self.max_iter, M=self._M)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
        return x - x.mean()

    def solve(self, rhs):
        rhs = _project(np.asarray(rhs, dtype=float))
        shape = self.grid.shape
        # L f = rhs  <=>  (-L) f = -rhs
        if rhs.ndim == 3:
            return self._solve_one(-rhs.reshape(-1)).reshape(shape)
        cols = [self._solve_one(-rhs[..., j].reshape(-1)) for j in range(rhs.shape[-1])]
        return np.stack(cols, axis=-1).reshape(shape + (rhs.shape[-1],))


SOLVERS = {"dct": DCTPoissonSolver, "cg": CGPoissonSolver}


def make_solver(grid: VoxelGrid, solver="dct", **kwargs):
    try:
        cls = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return cls(grid, **kwargs)


def relative_residual(f, rhs, spacing):
    rhs_norm = np.linalg.norm(rhs)
    res = np.linalg.norm(laplacian(f, spacing) - rhs)
    return res / rhs_norm if rhs_norm > 0 else res


def solve_laplace_system(rhs, grid: VoxelGrid, solver, tol=RESIDUAL_TOL):
    """Mean-zero solution of ``L f = rhs`` with residual verification."""
    f = solver.solve(rhs)
    res = relative_residual(f, _project(rhs), grid.spacing)
    if not res <= tol:
        raise SolverError(f"relative residual {res:.3e} exceeds {tol:.1e}")
    return f, res
