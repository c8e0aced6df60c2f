"""Sequential fusion of contact hypotheses into the surface map.

The map is always the full lumped fit of its tagged training set (cloud
points plus every fused contact particle), so a fusion step is a refit on
the fixed grid of the prior.
"""
from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .contact import ContactHypothesisSet, SensorConfig, sense_contacts
from .exceptions import InputError, OutOfGridError, ParseError
from .geometry import OrientedPointSet, Pose, TriangleMesh
from .io import FLOAT_FMT
from .registration import add_metric, register_model
from .spsr.grid import VoxelGrid
from .spsr.kernel import KernelConfig
from .spsr.normal_field import SAMPLE_MARGIN, fit_normal_field
from .spsr.state import SPSMapState, extract_surface_points, solve_poisson

CLOUD, CONTACT = 0, 1
TRACE_COLUMNS = ("step", "n_particles_fused", "add_error", "mean_variance_at_probes")


@dataclass(frozen=True)
class FusionConfig:
    """Map and registration settings shared by prior and updates."""

    resolution: int = 32
    padding: float = 0.25
    sigma_g: float = 1.0
    support_radius: int = 1
    solver: str = "dct"
    n_map_points: int = 8000
    map_seed: int = 0
    max_corr_dist: float = 0.01
    max_iter: int = 100

    @property
    def kernel(self):
        return KernelConfig(self.sigma_g, self.support_radius)


@dataclass(frozen=True, eq=False)
class FusionState:
    """Immutable snapshot of the map and its training set.

    ``sources`` tags each training point with ``CLOUD`` or ``CONTACT``;
    ``prior`` is kept for normal orientation of later contacts.
    """

    points: OrientedPointSet
    sources: np.ndarray
    map: SPSMapState
    prior: SPSMapState
    pose: Pose
    t: int = 0
    config: FusionConfig = field(default_factory=FusionConfig)
    n_dropped: int = 0

    @property
    def grid(self) -> VoxelGrid:
        return self.map.grid

    @property
    def n_contact_points(self):
        return int(np.sum(self.sources == CONTACT))


@dataclass(frozen=True, eq=False)
class ProbeSchedule:
    """Rectangular lattice of probe poses in the plane of an estimated
    hole frame; each pose locates the peg tip before descent."""

    poses: tuple
    rows: int
    cols: int
    pitch: float
    depth: float

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self):
        return np.array([p.translation for p in self.poses])

    def subsample(self, count):
        """``count`` probes spread evenly over the lattice order."""
        if not 1 <= count <= len(self.poses):
            raise InputError(f"cannot take {count} probes from a schedule of {len(self.poses)}")
        idx = np.unique(np.round(np.linspace(0, len(self.poses) - 1, count)).astype(int))
        return ProbeSchedule(tuple(self.poses[i] for i in idx), self.rows, self.cols, self.pitch, self.depth)


def make_schedule(X_hat: Pose, rows=5, cols=4, pitch=0.02, depth=0.05) -> ProbeSchedule:
    """``rows * cols`` poses centered on ``X_hat``, row-major, sharing its
    rotation; the lattice spans the frame's x (columns) and y (rows)."""
    if rows < 1 or cols < 1:
        raise InputError("rows and cols must be >= 1")
    if not (pitch > 0 and depth > 0):
        raise InputError("pitch and depth must be positive")
    ys = (np.arange(rows) - (rows - 1) / 2) * pitch
    xs = (np.arange(cols) - (cols - 1) / 2) * pitch
    poses = []
    for y in ys:
        for x in xs:
            poses.append(Pose(X_hat.rotation, X_hat.apply([x, y, 0.0])))
    return ProbeSchedule(tuple(poses), rows, cols, float(pitch), float(depth))


def schedule_for_count(X_hat: Pose, count, rows=5, cols=4, pitch=0.02, depth=0.05) -> ProbeSchedule:
    """Probe set of exactly ``count`` poses.

    Counts up to ``rows * cols`` sub-sample the default lattice; larger
    counts use the smallest square lattice holding them, spread over the
    same footprint as the default one.
    """
    base = make_schedule(X_hat, rows, cols, pitch, depth)
    if count <= len(base):
        return base.subsample(count)
    side = int(np.ceil(np.sqrt(count)))
    extent = pitch * (max(rows, cols) - 1)
    dense = make_schedule(X_hat, side, side, extent / (side - 1), depth)
    return dense.subsample(count)


# --- map construction ----------------------------------------------------------

def _fit(points: OrientedPointSet, grid: VoxelGrid, cfg: FusionConfig) -> SPSMapState:
    return solve_poisson(fit_normal_field(points, grid, cfg.kernel), solver=cfg.solver)


def map_points(state_map: SPSMapState, n, seed=0, support_only=True) -> OrientedPointSet:
    """Points drawn from the zero level set of the map.

    With ``support_only`` the draw is restricted to the part of the surface
    within kernel reach of a training sample; away from the data the
    normal field vanishes and the level set is the solver's closure, not an
    observation.
    """
    pts = extract_surface_points(state_map, n, seed)
    if not support_only:
        return pts
    samples = state_map.normal_field.samples.positions
    d, _ = cKDTree(samples).query(pts.positions, distance_upper_bound=state_map.normal_field.kernel.reach)
    return pts.subset(np.isfinite(d))


def register_map(state_map: SPSMapState, model, init: Pose, cfg: FusionConfig) -> Pose:
    """Pose of ``model`` (hole-frame points) from points drawn from the map."""
    observed = map_points(state_map, cfg.n_map_points, cfg.map_seed)
    return register_model(observed, model, init, cfg.max_corr_dist, cfg.max_iter).pose


def build_prior(cloud: OrientedPointSet, grid: VoxelGrid = None, cfg: FusionConfig = FusionConfig(),
                model=None, init: Pose = None) -> FusionState:
    """Fit the map to the cloud alone and register ``model`` against it.

    Without a model the pose estimate is ``init`` (identity by default).
    """
    if grid is None:
        grid = VoxelGrid.fit_points(cloud.positions, cfg.resolution, cfg.padding)
    prior = _fit(cloud, grid, cfg)
    init = Pose() if init is None else init
    pose = init if model is None else register_map(prior, model, init, cfg)
    return FusionState(cloud, np.full(len(cloud), CLOUD, dtype=np.int8), prior, prior, pose, 0, cfg)


def orient_normals(prior: SPSMapState, positions, normals):
    """Flip normals that disagree with the prior map's outward gradient."""
    grad = prior.gradient(positions)
    flip = np.sum(grad * normals, axis=1) < 0
    return np.where(flip[:, None], -normals, normals)


def fuse_contacts(state: FusionState, hyp: ContactHypothesisSet) -> FusionState:
    """Append a hypothesis set to the training set and refit.

    ``None`` (an empty sensor reading) returns ``state`` itself.  Particles
    too close to the grid boundary are dropped; the count is stored on the
    new state.
    """
    if hyp is None:
        return state
    grid = state.grid
    inside = grid.contains(hyp.positions, margin=SAMPLE_MARGIN)
    if not inside.any():
        raise OutOfGridError(f"all {len(hyp)} contact particles fall outside the map grid")
    pos = hyp.positions[inside]
    nrm = orient_normals(state.prior, pos, hyp.normals[inside])
    points = OrientedPointSet.concatenate([state.points, OrientedPointSet(pos, nrm)])
    sources = np.concatenate([state.sources, np.full(len(pos), CONTACT, dtype=np.int8)])
    new_map = _fit(points, grid, state.config)
    return FusionState(points, sources, new_map, state.prior, state.pose, state.t + 1, state.config,
                       int((~inside).sum()))


def refit(state: FusionState) -> SPSMapState:
    """Fresh fit of the full training set on the state's grid."""
    return _fit(state.points, state.grid, state.config)


# --- pipeline --------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    step: int
    n_particles_fused: int
    add_error: float
    mean_variance_at_probes: float


def run_pipeline(cloud: OrientedPointSet, measurements, peg: TriangleMesh, model,
                 cfg: FusionConfig = FusionConfig(), sensor: SensorConfig = SensorConfig(),
                 schedule: ProbeSchedule = None, init: Pose = None, gt_pose: Pose = None, grid=None):
    """Prior from ``cloud``, then sense and fuse every contact reading.

    After each fusion the model is re-registered against the current map
    (starting from the prior estimate; the schedule stays fixed) and a trace
    row is recorded.  ADD is ``nan`` without ``gt_pose``; probe variance is
    ``nan`` without a schedule.  Returns ``(state, trace, prior_add)``.
    """
    state = build_prior(cloud, grid, cfg, model, init)
    if isinstance(model, OrientedPointSet):
        model = model.positions
    model_pts = None if model is None else np.asarray(model, dtype=float)
    scored = model_pts is not None and gt_pose is not None
    prior_add = add_metric(model_pts, state.pose, gt_pose) if scored else float("nan")
    trace = []
    for i, w in enumerate(measurements):
        if not w.contact:
            continue
        sensed = sense_contacts(peg, w.pose, w, SensorConfig(sensor.lam, sensor.eps, sensor.mu,
                                                               sensor.n_samples, sensor.seed + i))
        if sensed is None:
            continue
        state = fuse_contacts(state, sensed)
        add = float("nan")
        if scored:
            add = add_metric(model_pts, register_map(state.map, model_pts, state.pose, cfg), gt_pose)
        var = float("nan")
        if schedule is not None:
            probes = schedule.positions
            ok = state.grid.contains(probes)
            if ok.any():
                var = float(np.mean(state.map.variance(probes[ok])))
        trace.append(TraceRow(state.t, state.n_contact_points, add, var))
    return state, trace, prior_add


def write_trace(trace, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            writer.writerow([r.step, r.n_particles_fused, FLOAT_FMT % r.add_error,
                             FLOAT_FMT % r.mean_variance_at_probes])


# --- scenario files --------------------------------------------------------------

def parse_floats(text, n=None, what="value", path=None):
    try:
        vals = [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"{what}: expected numbers, got {text!r}", path) from None
    if n is not None and len(vals) != n:
        raise ParseError(f"{what}: expected {n} numbers, got {len(vals)}", path)
    return vals


def parse_pose(section, prefix, path=None, default=None):
    """Pose from ``<prefix>_rotvec`` and ``<prefix>_translation`` keys."""
    rv, tr = section.get(f"{prefix}_rotvec"), section.get(f"{prefix}_translation")
    if rv is None and tr is None:
        return default
    rot = parse_floats(rv or "0 0 0", 3, f"{prefix}_rotvec", path)
    trans = parse_floats(tr or "0 0 0", 3, f"{prefix}_translation", path)
    return Pose.from_rotvec(rot, trans)


@dataclass(frozen=True)
class Scenario:
    """Inputs for one fusion run, read from an INI ``[scenario]`` section.

    Relative paths are resolved against the scenario file's directory.
    """

    cloud: Path
    wrench_log: Path
    peg_mesh: Path
    model_mesh: Path = None
    gt_pose: Pose = None
    init_pose: Pose = None
    rows: int = 5
    cols: int = 4
    pitch: float = 0.02
    depth: float = 0.05
    seed: int = 0
    n_model_points: int = 2000


def load_scenario(path) -> Scenario:
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], path) from None
    if "scenario" not in cp:
        raise ParseError("missing [scenario] section", path)
    s = cp["scenario"]
    base = path.parent

    def _path(key, required=True):
        if key not in s:
            if required:
                raise ParseError(f"missing key {key!r}", path)
            return None
        return (base / s[key]).resolve()

    try:
        return Scenario(
            _path("cloud"), _path("wrench_log"), _path("peg_mesh"), _path("model_mesh", False),
            parse_pose(s, "gt", path), parse_pose(s, "init", path),
            s.getint("rows", 5), s.getint("cols", 4), s.getfloat("pitch", 0.02), s.getfloat("depth", 0.05),
            s.getint("seed", 0), s.getint("n_model_points", 2000))
    except ValueError as exc:
        raise ParseError(str(exc), path) from None
