"""Point-to-point ICP with perturbed restarts, and the ADD pose error."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import EmptyModelError, InputError, NoCorrespondenceError
from .geometry import OrientedPointSet, Pose, mean_spacing, random_pose
from .io import FLOAT_FMT

CONVERGENCE_TOL = 1e-8


def _positions(points):
    if isinstance(points, OrientedPointSet):
        return points.positions
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError("point array must have shape (n, 3)")
    return arr


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    pose: Pose
    fitness: float
    rmse: float
    iterations: int
    rmse_trace: tuple = field(default=(), repr=False)


def kabsch(source, target):
    """Least-squares rigid transform mapping ``source`` rows onto ``target`` rows."""
    A = np.asarray(source, dtype=float)
    B = np.asarray(target, dtype=float)
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, cb - R @ ca)


def _pose_delta(T: Pose):
    return np.linalg.norm(T.rotation - np.eye(3)) + np.linalg.norm(T.translation)


def icp(source, target, init: Pose = None, max_corr_dist=None, max_iter=100, tol=CONVERGENCE_TOL,
        target_tree=None) -> RegistrationResult:
    """Align ``source`` to ``target``; the returned pose maps source into
    the target frame.

    ``max_corr_dist`` defaults to twice the mean nearest-neighbor spacing of
    the target.
    """
    src = _positions(source)
    tgt = _positions(target)
    if len(src) == 0 or len(tgt) == 0:
        raise InputError("ICP needs non-empty source and target")
    if max_corr_dist is None:
        max_corr_dist = 2.0 * mean_spacing(tgt)
    if not max_corr_dist > 0:
        raise InputError("max_corr_dist must be positive")
    tree = target_tree if target_tree is not None else cKDTree(tgt)
    T = Pose() if init is None else init
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        moved = T.apply(src)
        d, idx = tree.query(moved, distance_upper_bound=max_corr_dist)
        inl = np.isfinite(d)
        if not inl.any():
            if it == 1:
                raise NoCorrespondenceError(f"no target point within {max_corr_dist:g} of the source")
            break
        trace.append(float(np.sqrt(np.mean(d[inl] ** 2))))
        if inl.sum() < 3:
            break
        step = kabsch(moved[inl], tgt[idx[inl]])
        T = step @ T
        if _pose_delta(step) < tol:
            break
    d, _ = tree.query(T.apply(src), distance_upper_bound=max_corr_dist)
    inl = np.isfinite(d)
    rmse = float(np.sqrt(np.mean(d[inl] ** 2))) if inl.any() else float("inf")
    return RegistrationResult(T, float(inl.mean()), rmse, it, tuple(trace))


def icp_restarts(source, target, n=50, perturb_scale=0.1, seed=0, init: Pose = None,
                 max_corr_dist=None, max_iter=100, translation_scale=0.05):
    """``n`` ICP runs from perturbed copies of ``init``.

    Each start rotates the source about its (initialized) centroid by up to
    ``perturb_scale`` radians and translates it by up to
    ``translation_scale * diameter``, the diameter being that of the source
    cloud.  Runs that find no correspondence keep their starting pose.
    """
    if n < 1:
        raise InputError("restart count must be >= 1")
    src = _positions(source)
    tgt = _positions(target)
    init = Pose() if init is None else init
    if max_corr_dist is None:
        max_corr_dist = 2.0 * mean_spacing(tgt)
    lo, hi = src.min(axis=0), src.max(axis=0)
    diameter = float(np.linalg.norm(hi - lo))
    center = init.apply(src.mean(axis=0))
    tree = cKDTree(tgt)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        delta = random_pose(rng, perturb_scale, translation_scale * diameter)
        about = Pose(delta.rotation, center - delta.rotation @ center + delta.translation)
        start = about @ init
        try:
            res = icp(src, tgt, start, max_corr_dist, max_iter, target_tree=tree)
        except NoCorrespondenceError:
            res = RegistrationResult(start, 0.0, float("inf"), 0)
        out.append(res)
    return out


def add_metric(model, est: Pose, gt: Pose):
    """Average distance between model points under the two poses."""
    pts = _positions(model)
    if len(pts) == 0:
        raise EmptyModelError("ADD needs at least one model point")
    return float(np.mean(np.linalg.norm(est.apply(pts) - gt.apply(pts), axis=1)))


def register_model(observed, model, init: Pose, max_corr_dist=None, max_iter=100) -> RegistrationResult:
    """Estimate the pose of ``model`` (object-frame points) in the world.

    ICP aligns the observed world points to the model, so every observed
    point seeks its counterpart on the full model; the result is inverted to
    give the object pose.  ``init`` is an object-pose guess.
    """
    res = icp(observed, model, init.inverse(), max_corr_dist, max_iter)
    return RegistrationResult(res.pose.inverse(), res.fitness, res.rmse, res.iterations, res.rmse_trace)


def register_model_restarts(observed, model, init: Pose, n=50, perturb_scale=0.1, seed=0,
                            max_corr_dist=None, max_iter=100, translation_scale=0.05):
    """``icp_restarts`` counterpart of :func:`register_model`."""
    runs = icp_restarts(observed, model, n, perturb_scale, seed, init.inverse(), max_corr_dist, max_iter,
                        translation_scale)
    return [RegistrationResult(r.pose.inverse(), r.fitness, r.rmse, r.iterations, r.rmse_trace) for r in runs]


def write_restarts_csv(results, path, model=None, gt: Pose = None):
    """One row per restart: run_id, add, fitness, rmse, iters."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "add", "fitness", "rmse", "iters"])
        for i, r in enumerate(results):
            add = add_metric(model, r.pose, gt) if gt is not None else float("nan")
            writer.writerow([i, FLOAT_FMT % add, FLOAT_FMT % r.fitness, FLOAT_FMT % r.rmse, r.iterations])
