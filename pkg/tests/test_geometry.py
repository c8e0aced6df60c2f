import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from contactfusion.exceptions import (
    DegenerateNeighborhoodError,
    EmptyMeshError,
    InputError,
    KTooLargeError,
    TooFewPointsError,
)
from contactfusion.geometry import (
    OrientedPointSet,
    Pose,
    TriangleMesh,
    box_mesh,
    cylinder_mesh,
    estimate_normals,
    mean_spacing,
    nearest_neighbors,
    random_pose,
    sample_surface,
)

from .conftest import sphere_samples

seeds = st.integers(0, 2**32 - 1)


# --- Pose ---------------------------------------------------------------------------

def test_pose_rejects_non_rotation():
    with pytest.raises(InputError):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InputError):
        Pose(2 * np.eye(3))


@given(seeds)
def test_pose_compose_and_inverse(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng, np.pi, 1.0), random_pose(rng, np.pi, 1.0)
    x = rng.normal(size=(5, 3))
    assert np.allclose((a @ b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    assert np.allclose(a.inverse().apply(a.apply(x)), x, atol=1e-12)
    assert np.allclose((a @ b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)


def test_pose_from_rotvec_matches_scipy():
    rv = np.array([0.3, -0.2, 0.9])
    p = Pose.from_rotvec(rv, [1, 2, 3])
    assert np.allclose(p.rotation, Rotation.from_rotvec(rv).as_matrix(), atol=1e-15)


def test_random_pose_bounds():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = random_pose(rng, 0.1, 0.05)
        angle = np.linalg.norm(Rotation.from_matrix(p.rotation).as_rotvec())
        assert angle <= 0.1 + 1e-12
        assert np.linalg.norm(p.translation) <= 0.05 + 1e-12


# --- meshes and sampling ----------------------------------------------------------------

def test_box_mesh_normals_point_outward():
    mesh = box_mesh([0, 0, 0], [1, 2, 3])
    centroids = mesh.triangles.mean(axis=1)
    outward = centroids - np.array([0.5, 1.0, 1.5])
    assert np.all(np.sum(mesh.face_normals * outward, axis=1) > 0)
    assert mesh.area == pytest.approx(2 * (2 + 3 + 6))


def test_cylinder_mesh_closed_and_outward():
    mesh = cylinder_mesh(0.5, 2.0, 32)
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]])
    s = set(map(tuple, edges))
    assert all((b, a) in s for a, b in edges)
    tri = mesh.triangles
    volume = np.sum(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6
    polygon = 0.5 * 32 * 0.25 * np.sin(2 * np.pi / 32)
    assert volume == pytest.approx(polygon * 2.0, rel=1e-12)


def test_face_normals_unit_and_ccw():
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert np.allclose(mesh.face_normals, [[0, 0, 1]])


def test_mesh_rejects_bad_index():
    with pytest.raises(InputError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_sample_surface_cube_is_area_uniform():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    pts = sample_surface(mesh, 6000, seed=0)
    # classify by the unit normal: each cube side gets its own count
    keys = [tuple(np.round(n).astype(int)) for n in pts.normals]
    counts = np.array([keys.count(k) for k in set(keys)])
    assert len(counts) == 6
    sigma = np.sqrt(6000 * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - 1000) <= 3 * sigma)


def test_sample_surface_single_triangle():
    tri = np.array([[0.0, 0, 0], [2, 0, 0], [0, 1, 0]])
    mesh = TriangleMesh(tri, [[0, 1, 2]])
    pts = sample_surface(mesh, 3, seed=5)
    assert len(pts) == 3
    assert np.allclose(pts.normals, [[0, 0, 1]] * 3)
    # inside the triangle: x >= 0, y >= 0, x/2 + y <= 1
    x, y, z = pts.positions.T
    assert np.all(x >= 0) and np.all(y >= 0) and np.all(x / 2 + y <= 1 + 1e-12) and np.allclose(z, 0)


@given(seeds, st.integers(1, 300))
@settings(max_examples=30, deadline=None)
def test_sample_surface_points_lie_on_source_face(seed, n):
    mesh = cylinder_mesh(0.3, 1.0, 12)
    pts = sample_surface(mesh, n, seed)
    assert len(pts) == n
    # recompute barycentric coordinates against the face sharing the normal
    tri = mesh.triangles
    for p, nrm in zip(pts.positions[:20], pts.normals[:20]):
        ok = False
        for f in np.flatnonzero(np.all(np.isclose(mesh.face_normals, nrm, atol=1e-12), axis=1)):
            a, b, c = tri[f]
            M = np.column_stack([b - a, c - a])
            uv, *_ = np.linalg.lstsq(M, p - a, rcond=None)
            bary = np.array([1 - uv.sum(), *uv])
            if np.all(bary >= -1e-9) and np.allclose(M @ uv + a, p, atol=1e-12):
                assert abs(bary.sum() - 1) < 1e-9
                ok = True
                break
        assert ok


def test_sample_surface_deterministic():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    a = sample_surface(mesh, 50, seed=11)
    b = sample_surface(mesh, 50, seed=11)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.normals, b.normals)


def test_sample_empty_mesh():
    with pytest.raises(EmptyMeshError):
        sample_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 5)


# --- neighbors ----------------------------------------------------------------------

def test_nearest_neighbors_examples():
    pts = np.array([[1.0, 0, 0], [2, 0, 0], [3, 0, 0]])
    assert list(nearest_neighbors([0, 0, 0], pts, 2)) == [0, 1]
    assert list(nearest_neighbors(pts[2], pts, 1)) == [2]
    with pytest.raises(KTooLargeError):
        nearest_neighbors([0, 0, 0], pts, 4)


def test_nearest_neighbors_tie_break_by_index():
    pts = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 5]])
    assert list(nearest_neighbors([0, 0, 0], pts, 3)) == [0, 1, 2]


@given(seeds, st.integers(1, 10), st.integers(10, 2000))
@settings(max_examples=25, deadline=None)
def test_nearest_neighbors_match_exhaustive_scan(seed, k, n):
    rng = np.random.default_rng(seed)
    pts = rng.integers(-5, 5, size=(n, 3)).astype(float)  # many exact ties
    q = rng.integers(-5, 5, size=3).astype(float)
    d2 = [float(np.sum((p - q) ** 2)) for p in pts]
    oracle = sorted(range(n), key=lambda i: (d2[i], i))[:k]
    assert list(nearest_neighbors(q, pts, k)) == oracle


def test_nearest_neighbors_random_1000():
    rng = np.random.default_rng(1)
    pts = rng.random((1000, 3))
    q = rng.random(3)
    oracle = np.argsort(np.linalg.norm(pts - q, axis=1), kind="stable")[:10]
    assert list(nearest_neighbors(q, pts, 10)) == list(oracle)


# --- normals ------------------------------------------------------------------------

def test_estimate_normals_plane():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.random((200, 2)), np.zeros(200)])
    out = estimate_normals(pts, k=30, viewpoint=[0, 0, 1])
    angle = np.arccos(np.clip(out.normals @ [0, 0, 1.0], -1, 1))
    assert np.all(angle < 1e-3)


def test_estimate_normals_sphere():
    pts = sphere_samples(500, seed=2).positions
    out = estimate_normals(pts, k=30, viewpoint=[0, 0, 0])
    # viewpoint at the center flips normals inward; compare against -radial
    cosang = np.sum(out.normals * -pts, axis=1)
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).mean() < 5.0
    outside = estimate_normals(pts[pts[:, 2] > 0.5], k=10, viewpoint=[0, 0, 10])
    assert np.all(outside.normals[:, 2] > 0)


def test_estimate_normals_errors():
    with pytest.raises(TooFewPointsError):
        estimate_normals(np.random.default_rng(0).random((4, 3)), k=5)
    line = np.column_stack([np.linspace(0, 1, 40), np.zeros(40), np.zeros(40)])
    with pytest.raises(DegenerateNeighborhoodError):
        estimate_normals(line, k=5)


@given(seeds)
@settings(max_examples=15, deadline=None)
def test_estimate_normals_rotation_equivariant(seed):
    rng = np.random.default_rng(seed)
    pts = sphere_samples(300, seed=seed % 1000).positions * [1.0, 0.7, 0.4]
    R = random_pose(rng, np.pi, 0.0).rotation
    view = np.array([3.0, 1.0, 2.0])
    a = estimate_normals(pts, 20, view).normals
    b = estimate_normals(pts @ R.T, 20, R @ view).normals
    assert np.allclose(a @ R.T, b, atol=1e-6)


def test_oriented_point_set_validation():
    with pytest.raises(InputError):
        OrientedPointSet([[0, 0, 0]], [[0, 0, 2]])
    with pytest.raises(InputError):
        OrientedPointSet([[0, 0, 0], [1, 1, 1]], [[0, 0, 1]])
    s = OrientedPointSet.concatenate([OrientedPointSet([[0, 0, 0]], [[1, 0, 0]])] * 3)
    assert len(s) == 3


def test_mean_spacing_grid():
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3) * 0.5
    assert mean_spacing(g) == pytest.approx(0.5)
