"""Regular voxel lattice plus the two interpolation bases the kernel is built
from: trilinear hat functions and a tensor-product quadratic B-spline bump."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..exceptions import InputError, OutOfGridError

# Quadratic B-spline half-width, in units of (support_radius * spacing).
BUMP_HALF_WIDTH = 1.5
_BUMP_PEAK = 0.75


def quadratic_bspline(t):
    """Centered quadratic B-spline scaled so that its value at 0 is 1."""
    a = np.abs(np.asarray(t, dtype=float))
    out = np.where(a < 0.5, 0.75 - a * a, np.where(a < 1.5, 0.5 * (1.5 - a) ** 2, 0.0))
    return out / _BUMP_PEAK


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """``(K+1)^3`` nodes at ``origin + spacing * (i, j, k)``.

    Flat node indices are C-ordered: the x index varies slowest.
    """

    resolution: int
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        K = int(self.resolution)
        o = np.array(self.origin, dtype=float).reshape(3)
        h = float(self.spacing)
        if K < 4:
            raise InputError("grid resolution must be >= 4")
        if not h > 0:
            raise InputError("grid spacing must be positive")
        o.setflags(write=False)
        object.__setattr__(self, "resolution", K)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "spacing", h)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (self.resolution == other.resolution and self.spacing == other.spacing
                and np.array_equal(self.origin, other.origin))

    def __hash__(self):
        return hash((self.resolution, self.spacing, tuple(self.origin)))

    @classmethod
    def fit_points(cls, points, resolution=32, padding=0.25, min_margin=2.0):
        """Cubic grid around the bounding box of ``points``, inflated by
        ``padding`` of the largest extent per side and never by less than
        ``min_margin`` cells."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = float(np.max(hi - lo))
        if extent <= 0:
            extent = 1.0
        # side = extent + 2*max(padding*extent, margin*h) with h = side / K
        side = extent * (1.0 + 2.0 * padding)
        h = side / resolution
        if padding * extent < min_margin * h:
            side = extent / (1.0 - 2.0 * min_margin / resolution)
            side *= 1.0 + 1e-9
        h = side / resolution
        center = 0.5 * (lo + hi)
        return cls(resolution, center - 0.5 * side, h)

    @property
    def shape(self):
        n = self.resolution + 1
        return (n, n, n)

    @property
    def n_nodes(self):
        return (self.resolution + 1) ** 3

    @property
    def upper(self):
        return self.origin + self.spacing * self.resolution

    def node_positions(self):
        ax = np.arange(self.resolution + 1) * self.spacing
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([X, Y, Z], axis=-1).reshape(-1, 3) + self.origin

    def edge_positions(self, axis):
        """Midpoints of lattice edges parallel to ``axis``; one per node whose
        index along ``axis`` is below K, in C order of those nodes."""
        mask = self.edge_mask(axis)
        offset = np.zeros(3)
        offset[axis] = 0.5 * self.spacing
        return self.node_positions()[mask.reshape(-1)] + offset

    def edge_mask(self, axis):
        mask = np.ones(self.shape, dtype=bool)
        idx = [slice(None)] * 3
        idx[axis] = -1
        mask[tuple(idx)] = False
        return mask

    def contains(self, points, margin=0.0):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        tol = 1e-12 * max(1.0, self.spacing * self.resolution)
        lo = self.origin + margin * self.spacing - tol
        hi = self.upper - margin * self.spacing + tol
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def check_inside(self, points, margin=0.0):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = self.contains(pts, margin)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise OutOfGridError(f"point {bad.tolist()} lies outside the grid"
                                 + (f" (margin {margin} cells)" if margin else ""))
        return pts

    def flat_index(self, i, j, k):
        n = self.resolution + 1
        return (np.asarray(i) * n + np.asarray(j)) * n + np.asarray(k)


def trilinear_weights(x, grid: VoxelGrid):
    """Eight surrounding node indices and their trilinear weights.

    For a single point returns arrays of shape (8,); for (n, 3) input,
    shape (n, 8).
    """
    single = np.ndim(x) == 1
    pts = grid.check_inside(x)
    u = (pts - grid.origin) / grid.spacing
    base = np.clip(np.floor(u), 0, grid.resolution - 1).astype(np.int64)
    frac = np.clip(u - base, 0.0, 1.0)
    idx = np.empty((len(pts), 8), dtype=np.int64)
    w = np.empty((len(pts), 8))
    for c in range(8):
        bits = np.array([(c >> 2) & 1, (c >> 1) & 1, c & 1])
        node = base + bits
        idx[:, c] = grid.flat_index(node[:, 0], node[:, 1], node[:, 2])
        w[:, c] = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
    if single:
        return idx[0], w[0]
    return idx, w


def trilinear_matrix(points, grid: VoxelGrid):
    """Sparse (n_points, n_nodes) matrix of trilinear weights."""
    idx, w = trilinear_weights(np.asarray(points, dtype=float).reshape(-1, 3), grid)
    rows = np.repeat(np.arange(len(idx)), 8)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(len(idx), grid.n_nodes))


def node_bump_matrix(grid: VoxelGrid, support_radius=1):
    """Sparse (n_nodes, n_nodes) matrix ``M[o, o'] = F_o(o')``: each node's
    quadratic B-spline bump sampled at the lattice nodes."""
    n = grid.resolution + 1
    reach = int(np.ceil(BUMP_HALF_WIDTH * support_radius))
    offsets = np.arange(-reach, reach + 1)
    vals = quadratic_bspline(offsets / support_radius)
    keep = vals > 0
    one_d = sp.diags(vals[keep], offsets[keep], shape=(n, n), format="csr")
    return sp.kron(sp.kron(one_d, one_d), one_d, format="csr")


def bump_matrix(points, grid: VoxelGrid, support_radius=1, node_bumps=None):
    """Sparse (n_points, n_nodes) matrix with entries ``F_o(p)``.

    Each bump is represented by its nodal samples and interpolated
    trilinearly in between, so ``F_o(p) = sum_o' alpha_o'(p) M[o, o']``.
    This keeps every Gram matrix of the resulting kernel positive
    semi-definite, which exact B-spline evaluation does not.
    """
    if node_bumps is None:
        node_bumps = node_bump_matrix(grid, support_radius)
    return (trilinear_matrix(points, grid) @ node_bumps).tocsr()
