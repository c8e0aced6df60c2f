"""Synthetic stand-in for the robot cell.

A pinhole camera ray-casts a hole fixture (plate with a rectangular pocket)
under a time-of-flight depth noise model, and scripted vertical probes with
a cylindrical peg produce quasi-static wrench readings with ground truth.
All lengths are meters.

Frames: the hole frame has its origin at the center of the pocket opening
with +z out of the plate.  The peg hangs below the end-effector frame along
-z, its tip at ``z = -peg_length`` and the force/torque sensor at the origin.
"""
from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .contact import WrenchMeasurement, write_wrench_log
from .exceptions import ContactConfigurationError, InputError, NoHitError, ParseError
from .geometry import OrientedPointSet, Pose, TriangleMesh, cylinder_mesh, estimate_normals, sample_surface
from .io import FLOAT_FMT, read_mesh


# --- fixture geometry ----------------------------------------------------------

def _oriented_quad(a, b, c, d, outward):
    tris = [[a, b, c], [a, c, d]]
    out = []
    for t in tris:
        p = np.asarray(t, dtype=float)
        n = np.cross(p[1] - p[0], p[2] - p[0])
        out.append(t if np.dot(n, outward) > 0 else [t[0], t[2], t[1]])
    return out


def plate_with_pocket(plate=(0.12, 0.12, 0.03), pocket=(0.04, 0.04, 0.02)) -> TriangleMesh:
    """Closed plate mesh with a rectangular blind pocket in its top face."""
    W, D, H = plate
    w, d, depth = pocket
    if not (0 < w < W and 0 < d < D and 0 < depth < H):
        raise InputError("pocket must fit strictly inside the plate")
    X, Y, x, y = W / 2, D / 2, w / 2, d / 2
    o = [(-X, -Y), (X, -Y), (X, Y), (-X, Y)]
    i = [(-x, -y), (x, -y), (x, y), (-x, y)]
    top = [np.array([*p, 0.0]) for p in o]
    inner = [np.array([*p, 0.0]) for p in i]
    floor = [np.array([*p, -depth]) for p in i]
    bottom = [np.array([*p, -H]) for p in o]
    quads = []
    up, down = np.array([0, 0, 1.0]), np.array([0, 0, -1.0])
    for k in range(4):
        j = (k + 1) % 4
        quads.append((top[k], top[j], inner[j], inner[k], up))
        mid = 0.5 * (inner[k] + inner[j])
        quads.append((inner[k], inner[j], floor[j], floor[k], -np.array([mid[0], mid[1], 0.0])))
        mid_o = 0.5 * (top[k] + top[j])
        quads.append((top[k], top[j], bottom[j], bottom[k], np.array([mid_o[0], mid_o[1], 0.0])))
    quads.append((floor[0], floor[1], floor[2], floor[3], up))
    quads.append((bottom[0], bottom[1], bottom[2], bottom[3], down))
    verts, faces = [], []
    for *corners, outward in quads:
        for tri in _oriented_quad(*corners, outward):
            base = len(verts)
            verts.extend(tri)
            faces.append([base, base + 1, base + 2])
    return _weld(np.array(verts), np.array(faces))


def _weld(verts, faces, decimals=12):
    key = np.round(verts, decimals)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    return TriangleMesh(uniq, inverse.reshape(-1)[faces])


def peg_cylinder(diameter=0.036, length=0.08, segments=64) -> TriangleMesh:
    """Cylindrical peg in the end-effector frame: tip at ``z = -length``."""
    cyl = cylinder_mesh(diameter / 2, length, segments)
    return cyl.transformed(Pose(translation=[0.0, 0.0, -length]))


# --- camera --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``pose`` maps camera coordinates (x right, y down,
    z forward) to the world."""

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @classmethod
    def look_at(cls, target, distance=0.5, elevation_deg=45.0, azimuth_deg=-90.0,
                width=256, height=256, fov_deg=25.0):
        target = np.asarray(target, dtype=float)
        el, az = np.radians(elevation_deg), np.radians(azimuth_deg)
        eye = target + distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        forward = (target - eye) / np.linalg.norm(target - eye)
        right = np.cross(forward, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(Pose(R, eye), f, f, (width - 1) / 2, (height - 1) / 2, width, height)

    @property
    def position(self):
        return self.pose.translation

    @property
    def axis(self):
        return self.pose.rotation[:, 2]

    def ray_directions(self):
        """Unit world-frame ray directions, row-major over the pixel lattice."""
        v, u = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u, dtype=float)], axis=-1)
        d = d.reshape(-1, 3) @ self.pose.rotation.T
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def ray_mesh_intersect(origins, directions, mesh: TriangleMesh, eps=1e-12):
    """Nearest hit distance and face per ray (Moller-Trumbore); ``inf``/-1 on miss."""
    O = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(directions))
    Dr = np.asarray(directions, dtype=float)
    best = np.full(len(Dr), np.inf)
    face = np.full(len(Dr), -1)
    for fi, (a, b, c) in enumerate(mesh.triangles):
        e1, e2 = b - a, c - a
        p = np.cross(Dr, e2)
        det = p @ e1
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = O - a
        u = np.sum(s * p, axis=1) * inv
        q = np.cross(s, e1)
        v = np.sum(Dr * q, axis=1) * inv
        t = (q @ e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps) & (t < best)
        best[hit] = t[hit]
        face[hit] = fi
    return best, face


def point_mesh_distance(points, mesh: TriangleMesh):
    """Exact unsigned distance from each point to the mesh surface."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    best = np.full(len(P), np.inf)
    for a, b, c in mesh.triangles:
        best = np.minimum(best, _point_triangle_distance(P, a, b, c))
    return best


def _point_triangle_distance(P, a, b, c):
    # Ericson, Real-Time Collision Detection, closest point on triangle
    ab, ac = b - a, c - a
    ap = P - a
    d1, d2 = ap @ ab, ap @ ac
    bp = P - b
    d3, d4 = bp @ ab, bp @ ac
    cp = P - c
    d5, d6 = cp @ ab, cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = vb / denom
        w = vc / denom
        closest = a + v[:, None] * ab + w[:, None] * ac
        # edge and vertex regions
        t_ab = np.clip(d1 / (d1 - d3), 0, 1)
        t_ac = np.clip(d2 / (d2 - d6), 0, 1)
        t_bc = np.clip((d4 - d3) / ((d4 - d3) + (d5 - d6)), 0, 1)
    cand = [
        np.broadcast_to(a, P.shape), np.broadcast_to(b, P.shape), np.broadcast_to(c, P.shape),
        a + np.nan_to_num(t_ab)[:, None] * ab,
        a + np.nan_to_num(t_ac)[:, None] * ac,
        b + np.nan_to_num(t_bc)[:, None] * (c - b),
    ]
    dists = [np.linalg.norm(P - q, axis=1) for q in cand]
    inside = (va >= 0) & (vb >= 0) & (vc >= 0) & (denom > 0)
    face_d = np.where(inside, np.linalg.norm(P - np.nan_to_num(closest), axis=1), np.inf)
    return np.minimum(face_d, np.min(dists, axis=0))


def closest_face(mesh: TriangleMesh, point):
    """Index of the face nearest to ``point`` and the distance to it."""
    P = np.asarray(point, dtype=float).reshape(1, 3)
    d = np.array([_point_triangle_distance(P, a, b, c)[0] for a, b, c in mesh.triangles])
    i = int(np.argmin(d))
    return i, float(d[i])


# --- scene ---------------------------------------------------------------------

@dataclass(frozen=True)
class DepthNoiseModel:
    """Depth standard deviation ``k1 * (z - k2)^2`` along the viewing ray."""

    k1: float = 0.001
    k2: float = 0.0

    def __post_init__(self):
        if self.k1 < 0:
            raise InputError("k1 must be non-negative")

    def sigma(self, z):
        return self.k1 * (np.asarray(z, dtype=float) - self.k2) ** 2


@dataclass(frozen=True, eq=False)
class Scene:
    hole: TriangleMesh
    hole_pose: Pose
    peg: TriangleMesh
    camera: Camera
    seed: int = 0
    pocket: tuple = (0.04, 0.04, 0.02)
    plate: tuple = (0.12, 0.12, 0.03)
    peg_diameter: float = 0.036

    def __post_init__(self):
        clearance = min(self.pocket[0], self.pocket[1]) - self.peg_diameter
        if clearance <= 0:
            raise InputError("peg does not fit the pocket with positive clearance")

    @property
    def peg_length(self):
        return float(-self.peg.vertices[:, 2].min())

    def ee_pose_for_tip(self, tip_pose: Pose) -> Pose:
        """End-effector pose that puts the peg tip center at ``tip_pose``."""
        return Pose(tip_pose.rotation, tip_pose.apply([0.0, 0.0, self.peg_length]))

    def hole_world(self) -> TriangleMesh:
        return self.hole.transformed(self.hole_pose)


def default_scene(seed=0, plate=(0.12, 0.12, 0.03), pocket=(0.04, 0.04, 0.02), peg_diameter=0.036,
                  peg_length=0.08, hole_pose=None, camera_distance=0.5, elevation_deg=45.0,
                  image_size=256, fov_deg=25.0) -> Scene:
    """Desk-scale fixture seen by one camera at 45 degrees elevation."""
    if hole_pose is None:
        hole_pose = Pose.from_rotvec([0.0, 0.0, np.radians(10.0)], [0.55, 0.05, 0.02])
    camera = Camera.look_at(hole_pose.translation, camera_distance, elevation_deg,
                            width=image_size, height=image_size, fov_deg=fov_deg)
    return Scene(plate_with_pocket(plate, pocket), hole_pose, peg_cylinder(peg_diameter, peg_length),
                 camera, seed, tuple(pocket), tuple(plate), peg_diameter)


def render_cloud(scene: Scene, n_rays=None, noise: DepthNoiseModel = DepthNoiseModel(), seed=0,
                 normal_k=30, camera: Camera = None) -> OrientedPointSet:
    """Noisy depth-camera point cloud of the hole fixture with PCA normals.

    ``n_rays`` overrides the camera resolution with a square lattice of
    about that many rays.
    """
    cam = camera or scene.camera
    if n_rays is not None:
        side = max(1, int(round(np.sqrt(n_rays))))
        scale = side / cam.width
        cam = replace(cam, width=side, height=side, fx=cam.fx * scale, fy=cam.fy * scale,
                      cx=(side - 1) / 2, cy=(side - 1) / 2)
    dirs = cam.ray_directions()
    t, _ = ray_mesh_intersect(cam.position, dirs, scene.hole_world())
    hit = np.isfinite(t)
    if not hit.any():
        raise NoHitError("no camera ray hits the fixture")
    pts = cam.position + t[hit, None] * dirs[hit]
    z = (pts - cam.position) @ cam.axis
    rng = np.random.default_rng(seed)
    dz = rng.normal(size=len(z)) * noise.sigma(z)
    pts = cam.position + ((z + dz) / z)[:, None] * (pts - cam.position)
    return estimate_normals(pts, k=normal_k, viewpoint=cam.position)


# --- wrench synthesis ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroundTruthContact:
    point: np.ndarray
    force: np.ndarray
    surface_normal: np.ndarray
    timestamp: float = 0.0
    patch: np.ndarray = field(default=None, repr=False)


def synthesize_wrench(scene: Scene, probe_pose: Pose, q, force_magnitude=20.0, seed=0,
                      sigma_f=0.0, sigma_tau=0.0, mu_sim=0.2, timestamp=0.0):
    """Wrench from a point contact at ``q`` (world frame, on the peg).

    The clean force pushes the peg away from the environment, tilted off the
    inward peg normal by a random angle inside ``arctan(mu_sim)``; torque is
    ``(p_O - q) x f``.  Gaussian noise is added per axis afterwards.
    """
    q = np.asarray(q, dtype=float).reshape(3)
    local_q = probe_pose.inverse().apply(q)
    face, dist = closest_face(scene.peg, local_q)
    tol = 1e-6 * max(1.0, float(np.ptp(scene.peg.vertices)))
    if dist > tol:
        raise ContactConfigurationError(f"contact point is {dist:.3g} m off the peg surface")
    n_out = probe_pose.rotate(scene.peg.face_normals[face])
    rng = np.random.default_rng(seed)
    inward = -n_out
    tangent = np.cross(inward, rng.normal(size=3))
    tangent /= np.linalg.norm(tangent)
    tilt = rng.uniform(0.0, np.arctan(mu_sim))
    direction = np.cos(tilt) * inward + np.sin(tilt) * tangent
    f = force_magnitude * direction
    p_o = probe_pose.translation
    tau = np.cross(p_o - q, f)
    f_meas = f + sigma_f * rng.normal(size=3)
    tau_meas = tau + sigma_tau * rng.normal(size=3)
    w = WrenchMeasurement(f_meas, tau_meas, True, probe_pose, timestamp)
    return w, GroundTruthContact(q, f, -n_out, timestamp)


def _peg_bottom_points(scene: Scene, n=2000, seed=0):
    """Peg points that can touch first during a descent: rim and tip face."""
    tip = scene.peg.vertices[:, 2].min()
    tip_faces = np.isclose(scene.peg.triangles[:, :, 2], tip).all(axis=1)
    sub = TriangleMesh(scene.peg.vertices, scene.peg.faces[tip_faces])
    pts = sample_surface(sub, n, seed).positions
    rim = scene.peg.vertices[np.isclose(scene.peg.vertices[:, 2], tip)]
    return np.vstack([pts, rim])


def first_contact(scene: Scene, start_pose: Pose, depth, n_peg_points=2000):
    """Descend the peg along the probe's -z from ``start_pose``.

    Returns ``(travel, contact_pose, q, patch)`` with ``patch`` the touching
    peg samples in the world and ``q`` the one nearest their centroid, or
    ``None`` when nothing is touched within ``depth``.
    """
    hole = scene.hole_world()
    down = -start_pose.rotation[:, 2]
    peg_pts = start_pose.apply(_peg_bottom_points(scene, n_peg_points))
    t_peg, _ = ray_mesh_intersect(peg_pts, np.tile(down, (len(peg_pts), 1)), hole)
    # fixture vertices and edge samples rising into the peg
    peg_world = scene.peg.transformed(start_pose)
    edge_pts = _fixture_edge_points(hole)
    t_fix, _ = ray_mesh_intersect(edge_pts, np.tile(-down, (len(edge_pts), 1)), peg_world)
    travel = min(t_peg.min(initial=np.inf), t_fix.min(initial=np.inf))
    if not np.isfinite(travel) or travel > depth:
        return None
    tol = 1e-7
    # face contacts are represented by peg samples; fixture edges only
    # matter when they poke into the peg's tip face
    patch = peg_pts[t_peg <= travel + tol] + travel * down
    if len(patch) == 0:
        patch = edge_pts[t_fix <= travel + tol]
    center = patch.mean(axis=0)
    q = patch[np.argmin(np.linalg.norm(patch - center, axis=1))]
    contact_pose = Pose(start_pose.rotation, start_pose.translation + travel * down)
    return travel, contact_pose, q, patch


def _fixture_edge_points(mesh: TriangleMesh, per_edge=40):
    tri = mesh.triangles
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    s = np.linspace(0.0, 1.0, per_edge)
    pts = edges[:, None, 0] + s[None, :, None] * (edges[:, None, 1] - edges[:, None, 0])
    return np.unique(np.round(pts.reshape(-1, 3), 12), axis=0)


@dataclass
class ContactParams:
    force_magnitude: float = 20.0
    sigma_f: float = 0.0
    sigma_tau: float = 0.0
    mu_sim: float = 0.2
    approach_height: float = 0.01
    seed: int = 0


def scripted_probe_run(scene: Scene, schedule, params: ContactParams = ContactParams(), log_path=None,
                       truth_path=None):
    """One wrench row per scheduled probe; misses give contact-free rows.

    Schedule poses place the peg tip; each probe starts
    ``approach_height`` above its pose and descends along its -z axis.

    Returns ``(measurements, truths)`` where ``truths[i]`` is ``None`` for a
    miss.  Optionally writes the wrench log and a ground-truth CSV.
    """
    measurements, truths = [], []
    for i, probe in enumerate(schedule.poses):
        lift = probe.rotation[:, 2] * params.approach_height
        start = scene.ee_pose_for_tip(Pose(probe.rotation, probe.translation + lift))
        hit = first_contact(scene, start, schedule.depth + params.approach_height)
        if hit is None:
            measurements.append(WrenchMeasurement(np.zeros(3), np.zeros(3), False, start, float(i)))
            truths.append(None)
            continue
        _, contact_pose, q, patch = hit
        w, gt = synthesize_wrench(scene, contact_pose, q, params.force_magnitude, params.seed + i,
                                  params.sigma_f, params.sigma_tau, params.mu_sim, float(i))
        measurements.append(w)
        truths.append(replace(gt, patch=patch))
    if log_path is not None:
        write_wrench_log(measurements, log_path)
    if truth_path is not None:
        write_truth_log(truths, truth_path)
    return measurements, truths


def write_truth_log(truths, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "qx", "qy", "qz", "fx", "fy", "fz", "nx", "ny", "nz"])
        for gt in truths:
            if gt is None:
                continue
            row = [gt.timestamp, *gt.point, *gt.force, *gt.surface_normal]
            writer.writerow([FLOAT_FMT % v for v in row])


def read_truth_log(path):
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            v = {k: float(x) for k, x in row.items()}
            out.append(GroundTruthContact(np.array([v["qx"], v["qy"], v["qz"]]),
                                          np.array([v["fx"], v["fy"], v["fz"]]),
                                          np.array([v["nx"], v["ny"], v["nz"]]), v["t"]))
    return out


# --- scene description files ---------------------------------------------------

def _floats(text, n, key, path):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"{key}: expected numbers, got {text!r}", path) from None
    if len(vals) != n:
        raise ParseError(f"{key}: expected {n} numbers, got {len(vals)}", path)
    return vals


def write_scene(scene: Scene, path, noise: DepthNoiseModel = None, hole_mesh=None, peg_mesh=None):
    """INI scene description: fixture dimensions or mesh paths, poses,
    camera intrinsics and extrinsics, and depth noise parameters."""
    cp = configparser.ConfigParser()
    rv = Rotation.from_matrix(scene.hole_pose.rotation).as_rotvec()
    s = {
        "plate": " ".join(FLOAT_FMT % v for v in scene.plate),
        "pocket": " ".join(FLOAT_FMT % v for v in scene.pocket),
        "peg_diameter": FLOAT_FMT % scene.peg_diameter,
        "peg_length": FLOAT_FMT % scene.peg_length,
        "hole_rotvec": " ".join(FLOAT_FMT % v for v in rv),
        "hole_translation": " ".join(FLOAT_FMT % v for v in scene.hole_pose.translation),
        "seed": str(scene.seed),
    }
    if hole_mesh is not None:
        s["hole_mesh"] = str(hole_mesh)
    if peg_mesh is not None:
        s["peg_mesh"] = str(peg_mesh)
    cp["scene"] = s
    cam = scene.camera
    cp["camera"] = {
        "rotvec": " ".join(FLOAT_FMT % v for v in Rotation.from_matrix(cam.pose.rotation).as_rotvec()),
        "translation": " ".join(FLOAT_FMT % v for v in cam.pose.translation),
        "fx": FLOAT_FMT % cam.fx, "fy": FLOAT_FMT % cam.fy,
        "cx": FLOAT_FMT % cam.cx, "cy": FLOAT_FMT % cam.cy,
        "width": str(cam.width), "height": str(cam.height),
    }
    if noise is not None:
        cp["noise"] = {"k1": FLOAT_FMT % noise.k1, "k2": FLOAT_FMT % noise.k2}
    with Path(path).open("w") as fh:
        cp.write(fh)


def load_scene(path, return_noise=False):
    """Inverse of :func:`write_scene`; mesh paths resolve next to the file."""
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], path) from None
    for sec in ("scene", "camera"):
        if sec not in cp:
            raise ParseError(f"missing [{sec}] section", path)
    s, c = cp["scene"], cp["camera"]
    try:
        plate = tuple(_floats(s.get("plate", "0.12 0.12 0.03"), 3, "plate", path))
        pocket = tuple(_floats(s.get("pocket", "0.04 0.04 0.02"), 3, "pocket", path))
        diameter = s.getfloat("peg_diameter", 0.036)
        length = s.getfloat("peg_length", 0.08)
        hole_pose = Pose.from_rotvec(_floats(s.get("hole_rotvec", "0 0 0"), 3, "hole_rotvec", path),
                                     _floats(s.get("hole_translation", "0 0 0"), 3, "hole_translation", path))
        cam_pose = Pose.from_rotvec(_floats(c.get("rotvec", "0 0 0"), 3, "rotvec", path),
                                    _floats(c.get("translation", "0 0 0"), 3, "translation", path))
        camera = Camera(cam_pose, c.getfloat("fx"), c.getfloat("fy"), c.getfloat("cx"), c.getfloat("cy"),
                        c.getint("width"), c.getint("height"))
        seed = s.getint("seed", 0)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad scene value ({exc})", path) from None
    hole = read_mesh(path.parent / s["hole_mesh"]) if "hole_mesh" in s else plate_with_pocket(plate, pocket)
    peg = read_mesh(path.parent / s["peg_mesh"]) if "peg_mesh" in s else peg_cylinder(diameter, length)
    scene = Scene(hole, hole_pose, peg, camera, seed, pocket, plate, diameter)
    if return_noise:
        n = cp["noise"] if "noise" in cp else {}
        return scene, DepthNoiseModel(float(n.get("k1", 0.001)), float(n.get("k2", 0.0)))
    return scene
