"""Rigid transforms, triangle meshes, oriented point sets and the small
amount of computational geometry the rest of the package leans on."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .exceptions import (
    DegenerateNeighborhoodError,
    EmptyMeshError,
    InputError,
    KTooLargeError,
    TooFewPointsError,
)

ORTHO_TOL = 1e-9
UNIT_TOL = 1e-6


def _as_points(points, name="points"):
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R @ x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL) or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InputError("rotation must be a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def from_unchecked(cls, rotation, translation):
        """Re-orthonormalize a nearly-rotation matrix (e.g. parsed from text)."""
        U, _, Vt = np.linalg.svd(np.asarray(rotation, dtype=float).reshape(3, 3))
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return cls(R, translation)

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)
        return NotImplemented

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __repr__(self):
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, translation={np.round(self.translation, 6).tolist()})"


def _freeze(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OrientedPointSet:
    """Sample positions paired with unit normals."""

    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        P = _as_points(self.positions, "positions").copy()
        N = _as_points(self.normals, "normals").copy() if len(P) else np.zeros((0, 3))
        if P.shape != N.shape:
            raise InputError("positions and normals must have equal length")
        if len(N) and np.max(np.abs(np.linalg.norm(N, axis=1) - 1.0)) > UNIT_TOL:
            raise InputError("normals must be unit length")
        object.__setattr__(self, "positions", _freeze(P))
        object.__setattr__(self, "normals", _freeze(N))

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def transformed(self, pose: Pose):
        return OrientedPointSet(pose.apply(self.positions), pose.rotate(self.normals))

    def subset(self, index):
        return OrientedPointSet(self.positions[index], self.normals[index])

    @staticmethod
    def concatenate(sets):
        sets = list(sets)
        if not sets:
            return OrientedPointSet.empty()
        return OrientedPointSet(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.normals for s in sets]),
        )


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh; face normals follow counter-clockwise winding."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float).reshape(-1, 3)
        F = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise InputError("face index out of range")
        object.__setattr__(self, "vertices", _freeze(V))
        object.__setattr__(self, "faces", _freeze(F))

    def __len__(self):
        return len(self.faces)

    @property
    def triangles(self):
        """Corner coordinates, shape (n_faces, 3, 3)."""
        return self.vertices[self.faces]

    @property
    def face_areas(self):
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @property
    def face_normals(self):
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(length > 0, length, 1.0)

    @property
    def area(self):
        return float(self.face_areas.sum())

    def transformed(self, pose: Pose):
        return TriangleMesh(pose.apply(self.vertices), self.faces)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def box_mesh(lo, hi):
    """Axis-aligned box as 12 outward-facing triangles."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    V = np.array([[lo[0] if i & 1 == 0 else hi[0],
                   lo[1] if i & 2 == 0 else hi[1],
                   lo[2] if i & 4 == 0 else hi[2]] for i in range(8)])
    F = [
        [0, 2, 1], [1, 2, 3],  # z-
        [4, 5, 6], [5, 7, 6],  # z+
        [0, 1, 4], [1, 5, 4],  # y-
        [2, 6, 3], [3, 6, 7],  # y+
        [0, 4, 2], [2, 4, 6],  # x-
        [1, 3, 5], [3, 7, 5],  # x+
    ]
    return TriangleMesh(V, F)


def cylinder_mesh(radius, length, segments=48):
    """Closed cylinder along +z with its bottom cap at z=0."""
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    bottom = np.column_stack([ring, np.zeros(segments)])
    top = np.column_stack([ring, np.full(segments, length)])
    V = np.vstack([bottom, top, [[0.0, 0.0, 0.0], [0.0, 0.0, length]]])
    cb, ct = 2 * segments, 2 * segments + 1
    F = []
    for i in range(segments):
        j = (i + 1) % segments
        F.append([i, j, segments + j])
        F.append([i, segments + j, segments + i])
        F.append([cb, j, i])
        F.append([ct, segments + i, segments + j])
    return TriangleMesh(V, F)


def sample_surface(mesh: TriangleMesh, n: int, seed=None) -> OrientedPointSet:
    """Area-uniform samples carrying the normal of the face they came from."""
    if len(mesh) == 0:
        raise EmptyMeshError("cannot sample an empty mesh")
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    if areas.sum() <= 0:
        raise EmptyMeshError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.triangles[face]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return OrientedPointSet(pts, mesh.face_normals[face])


def nearest_neighbors(query, points, k: int):
    """Indices of the ``k`` closest points, ties broken by lower index."""
    pts = _as_points(points)
    q = np.asarray(query, dtype=float).reshape(3)
    if k > len(pts):
        raise KTooLargeError(f"k={k} exceeds the {len(pts)} available points")
    d2 = np.sum((pts - q) ** 2, axis=1)
    order = np.lexsort((np.arange(len(pts)), d2))
    return order[:k]


def estimate_normals(points, k: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> OrientedPointSet:
    """PCA normals over k-nearest neighborhoods, flipped toward ``viewpoint``.

    The neighborhood of each point includes the point itself.
    """
    pts = _as_points(points)
    if k < 3:
        raise InputError("k must be >= 3")
    if len(pts) <= k:
        raise TooFewPointsError(f"need more than k={k} points, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=k)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    if np.any(evals[:, 1] <= 1e-12 * scale):
        raise DegenerateNeighborhoodError("a neighborhood is collinear; normal undefined")
    normals = evecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=float).reshape(3) - pts
    normals = np.where((np.sum(normals * to_view, axis=1) < 0)[:, None], -normals, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointSet(pts, normals)


def mean_spacing(points):
    """Mean distance from each point to its nearest other point."""
    pts = _as_points(points)
    if len(pts) < 2:
        return 0.0
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].mean())


def random_pose(rng, max_angle, max_translation):
    """Rotation about a uniform random axis by an angle in [0, max_angle],
    translation uniform in a ball of radius ``max_translation``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    radius = max_translation * rng.random() ** (1.0 / 3.0)
    return Pose.from_rotvec(axis * angle, direction * radius)
