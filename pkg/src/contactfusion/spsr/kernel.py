"""The symmetrized, compactly supported lattice kernel.

``k_psr(x, y) = sigma_g * sum_o alpha_o(x) F_o(y)`` spreads a point's
trilinear weights through the node bumps; the covariance actually used is
its symmetrization ``k(x, y) = (k_psr(x, y) + k_psr(y, x)) / 2``.

With bumps represented by their nodal samples ``M``, ``F(y) = M a(y)`` and
both terms reduce to ``sigma_g * a(x)^T M a(y)``.  Kernel products between
point sets therefore factor through node space as
``K(X, Y) c = sigma_g * A_X M A_Y^T c`` and no dense matrix is needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import InputError
from .grid import BUMP_HALF_WIDTH, VoxelGrid, node_bump_matrix, trilinear_matrix


@dataclass(frozen=True)
class KernelConfig:
    sigma_g: float = 1.0
    support_radius: int = 1

    def __post_init__(self):
        if not self.sigma_g > 0:
            raise InputError("sigma_g must be positive")
        if int(self.support_radius) != self.support_radius or self.support_radius < 1:
            raise InputError("support_radius must be an integer >= 1")
        # sampled bumps wider than two cells have a sign-changing spectrum
        if self.support_radius > 2:
            raise InputError("support_radius above 2 gives an indefinite kernel")


class PointBasis:
    """Trilinear interpolation matrix of a fixed point set."""

    def __init__(self, points, grid):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.tri = trilinear_matrix(self.points, grid)
        self.tri.eliminate_zeros()
        self.tri_t = self.tri.T.tocsr()

    def __len__(self):
        return len(self.points)


class LatticeKernel:
    """Kernel evaluator bound to a grid; callable as ``k(x, y)``."""

    def __init__(self, grid: VoxelGrid, cfg: KernelConfig = KernelConfig()):
        self.grid = grid
        self.cfg = cfg
        self.node_bumps = node_bump_matrix(grid, cfg.support_radius)

    @property
    def sigma_g(self):
        return self.cfg.sigma_g

    @property
    def reach(self):
        """Per-axis separation at or beyond which the kernel vanishes."""
        bump_nodes = int(np.ceil(BUMP_HALF_WIDTH * self.cfg.support_radius)) - 1
        return (2 + bump_nodes) * self.grid.spacing

    def basis(self, points):
        return PointBasis(points, self.grid)

    def bumps_at(self, points):
        """Sparse (n, n_nodes) matrix of ``F_o(p)``."""
        return (self.basis(points).tri @ self.node_bumps).tocsr()

    def psr(self, x, y):
        """Unsymmetrized ``k_psr`` for paired rows of ``x`` and ``y``."""
        single = np.ndim(x) == 1 and np.ndim(y) == 1
        tri_x = self.basis(x).tri
        out = self.sigma_g * np.asarray(tri_x.multiply(self.bumps_at(y)).sum(axis=1)).ravel()
        return float(out[0]) if single else out

    def __call__(self, x, y):
        """``k(x_i, y_i)`` for paired rows; scalar in, scalar out."""
        single = np.ndim(x) == 1 and np.ndim(y) == 1
        bx, by = self.basis(x), self.basis(y)
        fx = (bx.tri @ self.node_bumps).tocsr()
        fy = (by.tri @ self.node_bumps).tocsr()
        forward = np.asarray(bx.tri.multiply(fy).sum(axis=1)).ravel()
        backward = np.asarray(by.tri.multiply(fx).sum(axis=1)).ravel()
        out = 0.5 * self.sigma_g * (forward + backward)
        return float(out[0]) if single else out

    def gram(self, x, y=None):
        """Dense cross-covariance matrix, for small sets."""
        bx = self.basis(x)
        by = bx if y is None else self.basis(y)
        return self.sigma_g * (bx.tri @ self.node_bumps @ by.tri_t).toarray()

    def cross_apply(self, bx: PointBasis, by: PointBasis, c):
        """``K(X, Y) @ c`` with ``K(X, Y)[i, j] = k(x_i, y_j)``."""
        return self.sigma_g * (bx.tri @ (self.node_bumps @ (by.tri_t @ c)))

    def node_apply(self, u):
        """``sigma_g * M @ u`` for node-space vectors (or column stacks)."""
        return self.sigma_g * (self.node_bumps @ u)


def build_kernel(grid: VoxelGrid, cfg: KernelConfig = KernelConfig()) -> LatticeKernel:
    return LatticeKernel(grid, cfg)
