"""Modality comparison: pose error of ICP against point clouds and maps.

Every modality produces a set of observed world points; the hole model is
registered to them from ``n_icp`` perturbed starts around the true pose and
scored with ADD over the model points.
"""
from __future__ import annotations

import configparser
import csv
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .contact import ContactHypothesisSet, SensorConfig, sense_contacts
from .exceptions import InputError, ParseError
from .fusion import FusionConfig, build_prior, fuse_contacts, map_points, schedule_for_count
from .geometry import sample_surface
from .io import FLOAT_FMT
from .registration import add_metric, register_model_restarts
from .sim import ContactParams, DepthNoiseModel, default_scene, load_scene, render_cloud, scripted_probe_run

BOX_COLUMNS = ("modality", "n_contacts", "run_id", "add", "fitness", "rmse", "iters")
METRIC_COLUMNS = ("modality", "n_contacts", "n_runs", "mean_add", "median_add", "std_add", "min_add", "max_add")
GT_PATCH_POINTS = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for ``evaluate`` and ``sweep``.

    Read from the ``[experiment]`` section of an INI file; every field name
    is a key.  ``contact_counts`` is a comma-separated list.
    """

    scene_file: str = None
    resolution: int = 64
    sigma_g: float = 1.0
    lam: float = 1.0
    eps: float = 0.9
    mu: float = 0.5
    k1: float = 0.001
    k2: float = 0.0
    n_icp: int = 50
    contact_counts: tuple = (5, 20, 100)
    seed: int = 0
    output_dir: str = None
    n_samples: int = 5000
    n_model_points: int = 2000
    n_dense_model_points: int = 20000
    n_map_points: int = 8000
    max_corr_dist: float = 0.01
    perturb_scale: float = 0.1
    translation_scale: float = 0.05
    force_magnitude: float = 20.0
    sigma_f: float = 0.0
    sigma_tau: float = 0.0
    rows: int = 5
    cols: int = 4
    pitch: float = 0.02
    depth: float = 0.05

    def __post_init__(self):
        counts = self.contact_counts
        if isinstance(counts, str):
            counts = tuple(int(v) for v in counts.replace(",", " ").split())
        object.__setattr__(self, "contact_counts", tuple(int(c) for c in counts))
        if self.resolution < 4:
            raise InputError("resolution must be >= 4")
        if self.n_icp < 1:
            raise InputError("n_icp must be >= 1")
        if any(c < 1 for c in self.contact_counts):
            raise InputError("contact counts must be >= 1")
        if self.k1 < 0:
            raise InputError("k1 must be non-negative")
        SensorConfig(self.lam, self.eps, self.mu, self.n_samples)
        if self.scene_file is not None and not Path(self.scene_file).is_file():
            raise InputError(f"scene file not found: {self.scene_file}")

    def updated(self, **overrides):
        """Copy with the non-``None`` overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @property
    def fusion(self):
        return FusionConfig(self.resolution, sigma_g=self.sigma_g, n_map_points=self.n_map_points,
                            map_seed=self.seed, max_corr_dist=self.max_corr_dist)

    @property
    def sensor(self):
        return SensorConfig(self.lam, self.eps, self.mu, self.n_samples, self.seed)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config(path, section="experiment") -> ExperimentConfig:
    """Read an ``ExperimentConfig``; relative paths resolve next to the file."""
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], path) from None
    if section not in cp:
        raise ParseError(f"missing [{section}] section", path)
    values = {}
    for key, raw in cp[section].items():
        if key not in _FIELD_TYPES:
            raise ParseError(f"unknown key {key!r}", path)
        kind = _FIELD_TYPES[key]
        try:
            if key in ("scene_file", "output_dir"):
                values[key] = str((path.parent / raw).resolve())
            elif key == "contact_counts":
                values[key] = raw
            elif kind == "int":
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {raw!r}", path) from None
    try:
        return ExperimentConfig(**values)
    except InputError as exc:
        raise ParseError(str(exc), path) from None


def write_config(cfg: ExperimentConfig, path):
    cp = configparser.ConfigParser()
    out = {}
    for k, v in asdict(cfg).items():
        if v is None:
            continue
        out[k] = ", ".join(str(c) for c in v) if isinstance(v, tuple) else str(v)
    cp["experiment"] = out
    with Path(path).open("w") as fh:
        cp.write(fh)


# --- evaluation ----------------------------------------------------------------

@dataclass
class ModalityResult:
    name: str
    n_contacts: int
    adds: np.ndarray
    runs: list = field(repr=False, default_factory=list)


def _scene(cfg: ExperimentConfig):
    return load_scene(cfg.scene_file) if cfg.scene_file else default_scene(cfg.seed)


def _truth_patch_set(truths, n_max, seed):
    """Ground-truth touching regions as an oriented set, at most ``n_max``
    points per contact."""
    rng = np.random.default_rng(seed)
    pos, nrm = [], []
    for gt in truths:
        if gt is None:
            continue
        patch = gt.patch if gt.patch is not None and len(gt.patch) else gt.point[None, :]
        if len(patch) > n_max:
            patch = patch[np.sort(rng.choice(len(patch), n_max, replace=False))]
        pos.append(patch)
        nrm.append(np.tile(gt.surface_normal / np.linalg.norm(gt.surface_normal), (len(patch), 1)))
    if not pos:
        return None
    P = np.vstack(pos)
    return ContactHypothesisSet(P, np.vstack(nrm), np.ones(len(P)))


def fuse_sensed(state, measurements, peg, sensor: SensorConfig):
    """Sense every contact reading and fuse the union of the hypotheses."""
    sets = []
    for i, w in enumerate(measurements):
        if not w.contact:
            continue
        hyp = sense_contacts(peg, w.pose, w, replace(sensor, seed=sensor.seed + i))
        if hyp is not None:
            sets.append(hyp)
    if not sets:
        return state, 0
    union = ContactHypothesisSet(np.vstack([h.positions for h in sets]), np.vstack([h.normals for h in sets]),
                                 np.concatenate([h.likelihoods for h in sets]))
    return fuse_contacts(state, union), len(sets)


def run_evaluation(cfg: ExperimentConfig, progress=None):
    """All modalities; returns a list of ``ModalityResult``.

    Modalities, in order: raw noisy cloud, map of the noisy cloud, map of the
    noise-free cloud, the noisy-cloud map fused with sensed contacts for each
    count in ``contact_counts``, and the noisy-cloud map fused with the
    ground-truth contact patches of the largest count.
    """
    say = progress or (lambda msg: None)
    scene = _scene(cfg)
    gt = scene.hole_pose
    model = sample_surface(scene.hole, cfg.n_model_points, cfg.seed).positions
    dense = sample_surface(scene.hole, cfg.n_dense_model_points, cfg.seed + 1).positions
    fcfg = cfg.fusion

    def score(name, n_contacts, observed):
        runs = register_model_restarts(observed, dense, gt, cfg.n_icp, cfg.perturb_scale, cfg.seed,
                                       cfg.max_corr_dist, 100, cfg.translation_scale)
        adds = np.array([add_metric(model, r.pose, gt) for r in runs])
        say(f"{name}: mean ADD {adds.mean():.6g} m")
        return ModalityResult(name, n_contacts, adds, runs)

    noisy = render_cloud(scene, noise=DepthNoiseModel(cfg.k1, cfg.k2), seed=cfg.seed)
    clean = render_cloud(scene, noise=DepthNoiseModel(0.0, cfg.k2), seed=cfg.seed)
    out = [score("raw_pc", 0, noisy.positions)]

    prior = build_prior(noisy, cfg=fcfg, model=dense, init=gt)
    out.append(score("spsmap_pc_noisy", 0, map_points(prior.map, cfg.n_map_points, cfg.seed).positions))
    clean_map = build_prior(clean, grid=prior.grid, cfg=fcfg)
    out.append(score("spsmap_pc_clean", 0, map_points(clean_map.map, cfg.n_map_points, cfg.seed).positions))

    params = ContactParams(cfg.force_magnitude, cfg.sigma_f, cfg.sigma_tau, seed=cfg.seed)
    truths_by_count = {}
    for count in cfg.contact_counts:
        schedule = schedule_for_count(prior.pose, count, cfg.rows, cfg.cols, cfg.pitch, cfg.depth)
        measurements, truths_by_count[count] = scripted_probe_run(scene, schedule, params)
        fused, _ = fuse_sensed(prior, measurements, scene.peg, cfg.sensor)
        pts = map_points(fused.map, cfg.n_map_points, cfg.seed).positions
        out.append(score(f"spsmap_pc_contacts_{count}", count, pts))

    count = max(cfg.contact_counts)
    gt_set = _truth_patch_set(truths_by_count[count], GT_PATCH_POINTS, cfg.seed)
    gt_state = prior if gt_set is None else fuse_contacts(prior, gt_set)
    out.append(score("spsmap_gt_contacts", count,
                     map_points(gt_state.map, cfg.n_map_points, cfg.seed).positions))
    return out


def write_boxplot_csv(results, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BOX_COLUMNS)
        for res in results:
            for i, (add, run) in enumerate(zip(res.adds, res.runs)):
                writer.writerow([res.name, res.n_contacts, i, FLOAT_FMT % add, FLOAT_FMT % run.fitness,
                                 FLOAT_FMT % run.rmse, run.iterations])


def write_metrics_csv(results, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for res in results:
            a = res.adds
            writer.writerow([res.name, res.n_contacts, len(a)]
                            + [FLOAT_FMT % v for v in (a.mean(), np.median(a), a.std(), a.min(), a.max())])


def read_metrics_csv(path):
    with Path(path).open(newline="") as fh:
        return {row["modality"]: row for row in csv.DictReader(fh)}
