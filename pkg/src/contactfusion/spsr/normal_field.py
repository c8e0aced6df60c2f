"""Gaussian-process posterior over the interpolated normal field.

The training Gram matrix is replaced by its row-sum lumped diagonal ``D``,
so the posterior mean and covariance are

    V(x)       = sum_s k(p_s, x) N_s / D_s
    K_V(x, y)  = k(x, y) - sum_s k(x, p_s) k(p_s, y) / D_s

applied independently to each vector component.

Grid-sampled vector fields are staggered: component ``a`` stored at node
``n`` is the value at the edge midpoint ``node(n) + h/2 e_a``.  The slot of
the last node along ``a`` has no edge and always holds zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import EmptySetError, InputError, ZeroLumpedWeightError
from ..geometry import OrientedPointSet
from .grid import VoxelGrid
from .kernel import KernelConfig, LatticeKernel, PointBasis, build_kernel

MIN_SAMPLES = 10
MIN_LUMPED_WEIGHT = 1e-12
# training points must sit this many cells inside the grid boundary
SAMPLE_MARGIN = 2.0


@dataclass(frozen=True, eq=False)
class NormalFieldPosterior:
    samples: OrientedPointSet
    weights: np.ndarray
    field: np.ndarray
    kernel: LatticeKernel
    sample_basis: PointBasis = field(repr=False)
    edge_bases: tuple = field(repr=False)

    @property
    def grid(self) -> VoxelGrid:
        return self.kernel.grid

    def mean(self, x):
        """Posterior mean ``V(x)`` at arbitrary points, shape (n, 3)."""
        bx = self.kernel.basis(x)
        coef = self.samples.normals / self.weights[:, None]
        return self.kernel.cross_apply(bx, self.sample_basis, coef)

    def covariance(self, x, y):
        """Per-component ``K_V(x_i, y_i)`` for paired rows."""
        single = np.ndim(x) == 1 and np.ndim(y) == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        k = self.kernel
        prior = k(x, y)
        tri_s_t = self.sample_basis.tri_t
        kx = (k.basis(x).tri @ k.node_bumps @ tri_s_t) * k.sigma_g
        ky = (k.basis(y).tri @ k.node_bumps @ tri_s_t) * k.sigma_g
        data = np.asarray(kx.multiply(ky).multiply(1.0 / self.weights[None, :]).sum(axis=1)).ravel()
        out = prior - data
        return float(out[0]) if single else out

    def _node_splat(self, g):
        """Splat each staggered component of ``g`` to nodes: (n_nodes, 3[, m])."""
        cols = []
        for a in range(3):
            mask = self.grid.edge_mask(a)
            ga = g[..., a][mask] if g.ndim == 4 else g[:, :, :, a, :][mask]
            cols.append(self.edge_bases[a].tri_t @ ga)
        return cols

    def apply(self, g):
        """``K_V g`` for a staggered edge field ``g`` of shape (K+1, K+1, K+1, 3)."""
        g = np.asarray(g, dtype=float)
        out = np.zeros_like(g)
        k = self.kernel
        for a, u in enumerate(self._node_splat(g)):
            mu = k.node_apply(u)
            at_samples = self.sample_basis.tri @ mu
            back = k.node_apply(self.sample_basis.tri_t @ (at_samples / self.weights))
            mask = self.grid.edge_mask(a)
            out[..., a][mask] = self.edge_bases[a].tri @ (mu - back)
        return out

    def quad_form(self, g):
        """``g^T K_V g`` summed over components.

        ``g`` may carry a trailing batch axis, shape (K+1, K+1, K+1, 3, m).
        """
        g = np.asarray(g, dtype=float)
        k = self.kernel
        total = 0.0
        for u in self._node_splat(g):
            mu = k.node_apply(u)
            at_samples = self.sample_basis.tri @ mu
            prior = np.sum(u * mu, axis=0)
            data = np.sum(at_samples ** 2 / (self.weights[:, None] if at_samples.ndim == 2 else self.weights), axis=0)
            total = total + prior - data
        return total


def fit_normal_field(samples: OrientedPointSet, grid: VoxelGrid, cfg: KernelConfig = KernelConfig(),
                     kernel: LatticeKernel = None) -> NormalFieldPosterior:
    """Fit the lumped GP posterior of the normal field to oriented samples."""
    if len(samples) == 0:
        raise EmptySetError("no training samples")
    if len(samples) < MIN_SAMPLES:
        raise InputError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    grid.check_inside(samples.positions, margin=SAMPLE_MARGIN)
    if kernel is None:
        kernel = build_kernel(grid, cfg)
    sb = kernel.basis(samples.positions)
    weights = kernel.cross_apply(sb, sb, np.ones(len(samples)))
    if np.any(weights <= MIN_LUMPED_WEIGHT):
        raise ZeroLumpedWeightError("a sample has vanishing lumped weight; check grid and kernel settings")
    coef = samples.normals / weights[:, None]
    edge_bases = tuple(kernel.basis(grid.edge_positions(a)) for a in range(3))
    V = np.zeros(grid.shape + (3,))
    for a in range(3):
        V[..., a][grid.edge_mask(a)] = kernel.cross_apply(edge_bases[a], sb, coef[:, a])
    weights.setflags(write=False)
    V.setflags(write=False)
    return NormalFieldPosterior(samples, weights, V, kernel, sb, edge_bases)
