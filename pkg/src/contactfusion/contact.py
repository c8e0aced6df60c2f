"""Contact occupancy sensor: map one force/torque reading to weighted
contact hypotheses on the peg surface by rejection sampling.

Wrench vectors are expressed in the world frame.  Torque follows the
convention ``tau = (p_O - p_C) x f`` so that the residual vanishes at the
true contact; data from a sensor using the opposite convention must be
negated on ingestion.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InputError, NoContactError, ParseError, ZeroForceError
from .geometry import OrientedPointSet, Pose, TriangleMesh, sample_surface
from .io import FLOAT_FMT, write_point_cloud

FORCE_DEADBAND = 0.5
CONE_ANGLE_TOL = 1e-6

WRENCH_COLUMNS = (
    ["t", "fx", "fy", "fz", "tx", "ty", "tz", "theta"]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + ["px", "py", "pz"]
)


@dataclass(frozen=True, eq=False)
class WrenchMeasurement:
    force: np.ndarray
    torque: np.ndarray
    contact: bool
    pose: Pose = field(default_factory=Pose)
    timestamp: float = 0.0
    deadband: float = FORCE_DEADBAND

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        tau = np.array(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(tau))):
            raise InputError("wrench components must be finite")
        if self.contact and np.linalg.norm(f) <= self.deadband:
            raise InputError(f"contact flagged but |f| <= deadband {self.deadband} N")
        f.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", tau)
        object.__setattr__(self, "contact", bool(self.contact))

    @property
    def origin(self):
        """Sensor frame origin in world coordinates."""
        return self.pose.translation

    def transformed(self, T: Pose):
        """The same physical reading seen after a rigid change of world frame."""
        return WrenchMeasurement(T.rotate(self.force), T.rotate(self.torque), self.contact,
                                 T @ self.pose, self.timestamp, self.deadband)


@dataclass(frozen=True)
class SensorConfig:
    lam: float = 1.0
    eps: float = 0.9
    mu: float = 0.5
    n_samples: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise InputError("lambda must be positive")
        if not 0 < self.eps < 1:
            raise InputError("epsilon must lie in (0, 1)")
        if self.mu < 0:
            raise InputError("friction coefficient must be non-negative")
        if self.n_samples < 1:
            raise InputError("sample count must be >= 1")


@dataclass(frozen=True, eq=False)
class ContactHypothesisSet:
    positions: np.ndarray
    normals: np.ndarray
    likelihoods: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        if len(self.positions) == 0:
            raise InputError("hypothesis sets are non-empty; use None for an empty reading")

    def __len__(self):
        return len(self.positions)

    def as_points(self) -> OrientedPointSet:
        return OrientedPointSet(self.positions, self.normals)

    def best(self):
        """Index of the maximum-likelihood particle (lowest index on ties)."""
        return int(np.argmax(self.likelihoods))


def residual(p_c, p_o, w: WrenchMeasurement):
    """``||(p_O - p_C) x f - tau||^2`` for one or many candidate points."""
    if not w.contact:
        raise NoContactError("residual is undefined without contact")
    arm = np.asarray(p_o, dtype=float) - np.asarray(p_c, dtype=float)
    r = np.cross(arm, w.force) - w.torque
    out = np.sum(r * r, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def likelihood(l, lam=1.0):
    l = np.asarray(l, dtype=float)
    if np.any(l < 0):
        raise InputError("residual must be non-negative")
    out = np.exp(-lam * l)
    return float(out) if out.ndim == 0 else out


def friction_cone_accept(force, n_surf, mu):
    """True where the reaction force lies in the friction cone about the
    inward direction ``-n_surf``."""
    f = np.asarray(force, dtype=float)
    n = np.asarray(n_surf, dtype=float)
    if np.linalg.norm(f) <= 0:
        raise ZeroForceError("friction cone test needs a non-zero force")
    push = -f
    cross = np.linalg.norm(np.cross(push, n), axis=-1)
    dot = np.sum(push * n, axis=-1)
    angle = np.arctan2(cross, dot)
    out = angle <= np.arctan(mu) + CONE_ANGLE_TOL
    return bool(out) if np.ndim(out) == 0 else out


def sense_contacts(peg: TriangleMesh, ee_pose: Pose, w: WrenchMeasurement,
                   cfg: SensorConfig = SensorConfig()):
    """Contact hypotheses explaining ``w``, or ``None`` if no sample survives.

    Samples are drawn area-uniformly on the peg in its own frame, moved to
    the world by ``ee_pose``, filtered by the friction cone and finally by
    the likelihood threshold.  Every kept particle carries the force
    direction as its normal.
    """
    if not w.contact:
        raise NoContactError("sense_contacts needs a reading with contact")
    local = sample_surface(peg, cfg.n_samples, cfg.seed)
    world = local.transformed(ee_pose)
    ok = friction_cone_accept(w.force, world.normals, cfg.mu)
    pts = world.positions[ok]
    L = likelihood(residual(pts, ee_pose.translation, w), cfg.lam)
    keep = L >= cfg.eps
    if not np.any(keep):
        return None
    direction = w.force / np.linalg.norm(w.force)
    n_keep = int(keep.sum())
    return ContactHypothesisSet(pts[keep], np.tile(direction, (n_keep, 1)), L[keep], w.timestamp)


def mean_sample_spacing(peg: TriangleMesh, n_samples: int):
    """Typical distance between area-uniform samples: sqrt(area / n)."""
    return float(np.sqrt(peg.area / n_samples))


def write_hypotheses(hyp: ContactHypothesisSet, path):
    write_point_cloud(hyp.as_points(), path, scalars={"likelihood": hyp.likelihoods})


# --- wrench log CSV ------------------------------------------------------------

def wrench_row(w: WrenchMeasurement):
    return ([w.timestamp] + list(w.force) + list(w.torque) + [1 if w.contact else 0]
            + list(w.pose.rotation.reshape(-1)) + list(w.pose.translation))


def write_wrench_log(measurements, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WRENCH_COLUMNS)
        for w in measurements:
            row = wrench_row(w)
            writer.writerow([FLOAT_FMT % v if i != 7 else str(int(v)) for i, v in enumerate(row)])


def read_wrench_log(path, deadband=FORCE_DEADBAND):
    """Parse a wrench log; schema problems raise ``ParseError`` with the
    1-based file line number."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty wrench log", path, 1) from None
        missing = [c for c in WRENCH_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", path, 1)
        col = {c: header.index(c) for c in WRENCH_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            try:
                vals = {c: float(row[i]) for c, i in col.items()}
            except ValueError as exc:
                raise ParseError(f"bad number ({exc})", path, lineno) from None
            if vals["theta"] not in (0.0, 1.0):
                raise ParseError("theta must be 0 or 1", path, lineno)
            R = np.array([[vals[f"r{i}{j}"] for j in range(3)] for i in range(3)])
            try:
                pose = Pose(R, [vals["px"], vals["py"], vals["pz"]])
                w = WrenchMeasurement(
                    [vals["fx"], vals["fy"], vals["fz"]], [vals["tx"], vals["ty"], vals["tz"]],
                    vals["theta"] == 1.0, pose, vals["t"], deadband)
            except InputError as exc:
                raise ParseError(str(exc), path, lineno) from None
            out.append(w)
    return out
