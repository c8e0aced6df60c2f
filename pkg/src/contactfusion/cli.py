"""Command-line entry point.

Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on usage or
input errors.  Outputs go to ``--output-dir``, else the config file's
``output_dir``, else ``$CONTACTFUSION_OUTPUT_DIR``, else ``./out``.
"""
from __future__ import annotations

import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
from scipy.spatial.transform import Rotation

from . import __version__
from .contact import SensorConfig, read_wrench_log, sense_contacts, write_hypotheses
from .exceptions import ContactFusionError, InputError
from .experiment import (
    ExperimentConfig,
    load_config,
    run_evaluation,
    write_boxplot_csv,
    write_config,
    write_metrics_csv,
)
from .fusion import load_scenario, make_schedule, run_pipeline, schedule_for_count, write_trace
from .geometry import sample_surface
from .io import FLOAT_FMT, read_mesh, read_point_cloud, write_grid, write_mesh, write_obj, write_point_cloud
from .sim import (
    ContactParams,
    DepthNoiseModel,
    default_scene,
    load_scene,
    render_cloud,
    scripted_probe_run,
    write_scene,
)
from .spsr.grid import VoxelGrid
from .spsr.kernel import KernelConfig
from .spsr.normal_field import fit_normal_field
from .spsr.state import extract_mesh, solve_poisson

OUTPUT_ENV = "CONTACTFUSION_OUTPUT_DIR"
EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)


def _config(path, **overrides) -> ExperimentConfig:
    cfg = load_config(path) if path is not None else ExperimentConfig()
    return cfg.updated(**overrides)


def _outdir(flag, cfg: ExperimentConfig = None) -> Path:
    chosen = flag or (cfg.output_dir if cfg is not None else None) or os.environ.get(OUTPUT_ENV) or "out"
    out = Path(chosen)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(fn, *args, **kwargs):
    """Map package errors onto exit codes with the error name on stderr."""
    try:
        return fn(*args, **kwargs)
    except InputError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(2)
    except (ContactFusionError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)


config_option = click.option("--config", "config_path", type=EXISTING_FILE, default=None,
                             help="INI file with an [experiment] section.")
outdir_option = click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
                             help=f"Output directory (default: config, ${OUTPUT_ENV}, ./out).")


@click.group()
@click.version_option(__version__)
def main():
    """Surface maps from point clouds and force/torque contacts."""


# --- reconstruct -----------------------------------------------------------------

@main.command()
@click.argument("cloud", type=EXISTING_FILE)
@config_option
@outdir_option
@click.option("--resolution", "-K", type=int, default=None, help="Grid cells per axis.")
@click.option("--sigma-g", type=float, default=None, help="Kernel variance scale.")
@click.option("--points", type=int, default=None, help="Use a random subset of this many input points.")
@click.option("--seed", type=int, default=None)
@click.option("--variance/--no-variance", default=False, help="Also export per-node variance (slow).")
def reconstruct(cloud, config_path, output_dir, resolution, sigma_g, points, seed, variance):
    """Fit a surface map to an oriented PLY point cloud.

    Writes map.grid (mean field, optionally variance) and surface.ply.
    """
    cfg = _run(_config, config_path, sigma_g=sigma_g, seed=seed)
    K = resolution if resolution is not None else (cfg.resolution if config_path else 32)
    out = _outdir(output_dir, cfg)
    _run(_reconstruct, cloud, cfg, K, points, variance, out)


def _reconstruct(cloud_path, cfg, K, n_points, variance, out):
    cloud = read_point_cloud(cloud_path)
    if n_points is not None:
        if n_points < 1:
            raise InputError("--points must be >= 1")
        if n_points < len(cloud):
            rng = np.random.default_rng(cfg.seed)
            cloud = cloud.subset(np.sort(rng.choice(len(cloud), n_points, replace=False)))
    grid = VoxelGrid.fit_points(cloud.positions, K)
    state = solve_poisson(fit_normal_field(cloud, grid, KernelConfig(cfg.sigma_g)))
    fields = {"mean": state.mean_field}
    if variance:
        fields["variance"] = state.variance_field()
    write_grid(out / "map.grid", grid, fields)
    mesh = extract_mesh(state)
    write_mesh(mesh, out / "surface.ply")
    click.echo(f"reconstruct: {len(cloud)} points, K={K}, h={grid.spacing:.6g}, "
               f"residual={state.residual:.3g}, {len(mesh)} faces -> {out}")


# --- sense -----------------------------------------------------------------------

@main.command()
@click.argument("wrench_log", type=EXISTING_FILE)
@click.argument("peg_mesh", type=EXISTING_FILE)
@config_option
@outdir_option
@click.option("--lam", type=float, default=None, help="Likelihood sharpness.")
@click.option("--eps", type=float, default=None, help="Likelihood threshold.")
@click.option("--mu", type=float, default=None, help="Friction coefficient.")
@click.option("--n-samples", type=int, default=None, help="Peg surface samples per reading.")
@click.option("--seed", type=int, default=None)
def sense(wrench_log, peg_mesh, config_path, output_dir, lam, eps, mu, n_samples, seed):
    """Contact hypotheses for every contact row of a wrench log.

    Writes hypotheses_tNNNN.ply (NNNN = row index) with a per-vertex
    likelihood property.
    """
    cfg = _run(_config, config_path, lam=lam, eps=eps, mu=mu, n_samples=n_samples, seed=seed)
    out = _outdir(output_dir, cfg)
    _run(_sense, wrench_log, peg_mesh, cfg.sensor, out)


def _sense(log_path, peg_path, sensor: SensorConfig, out):
    measurements = read_wrench_log(log_path)
    peg = read_mesh(peg_path)
    contacts = [(i, w) for i, w in enumerate(measurements) if w.contact]
    if not contacts:
        click.echo(f"warning: {log_path} has no contact rows; nothing written", err=True)
        return
    written = 0
    for i, w in contacts:
        hyp = sense_contacts(peg, w.pose, w, replace(sensor, seed=sensor.seed + i))
        if hyp is None:
            click.echo(f"warning: row {i}: no hypothesis passed the likelihood threshold", err=True)
            continue
        write_hypotheses(hyp, out / f"hypotheses_t{i:04d}.ply")
        written += 1
    click.echo(f"sense: {len(contacts)} contact rows, {written} hypothesis files -> {out}")


# --- fuse ------------------------------------------------------------------------

@main.command()
@click.argument("scenario", type=EXISTING_FILE)
@config_option
@outdir_option
@click.option("--resolution", "-K", type=int, default=None)
@click.option("--sigma-g", type=float, default=None)
def fuse(scenario, config_path, output_dir, resolution, sigma_g):
    """Prior map from a cloud, then sequential contact fusion.

    Writes trace.csv, map.grid and surface.ply for the final map.
    """
    cfg = _run(_config, config_path, resolution=resolution, sigma_g=sigma_g)
    out = _outdir(output_dir, cfg)
    _run(_fuse, scenario, cfg, out)


def _fuse(scenario_path, cfg: ExperimentConfig, out):
    sc = load_scenario(scenario_path)
    cloud = read_point_cloud(sc.cloud)
    measurements = read_wrench_log(sc.wrench_log)
    peg = read_mesh(sc.peg_mesh)
    model = None
    if sc.model_mesh is not None:
        model = sample_surface(read_mesh(sc.model_mesh), sc.n_model_points, sc.seed).positions
    init = sc.init_pose or sc.gt_pose
    schedule = make_schedule(init, sc.rows, sc.cols, sc.pitch, sc.depth) if init is not None else None
    fcfg = cfg.fusion
    state, trace, prior_add = run_pipeline(cloud, measurements, peg, model, fcfg, cfg.sensor, schedule,
                                           init, sc.gt_pose)
    write_trace(trace, out / "trace.csv")
    write_grid(out / "map.grid", state.grid, {"mean": state.map.mean_field})
    write_mesh(extract_mesh(state.map), out / "surface.ply")
    final = trace[-1].add_error if trace else prior_add
    click.echo(f"fuse: {state.t} contact sets, {state.n_contact_points} particles, "
               f"prior ADD {FLOAT_FMT % prior_add}, final ADD {FLOAT_FMT % final} -> {out}")


# --- evaluate / sweep ------------------------------------------------------------

def _eval_options(fn):
    for opt in reversed([
        click.option("--resolution", "-K", type=int, default=None),
        click.option("--sigma-g", type=float, default=None),
        click.option("--k1", type=float, default=None, help="Depth noise gain (1/m)."),
        click.option("--k2", type=float, default=None, help="Depth noise offset (m)."),
        click.option("--n-icp", type=int, default=None, help="ICP restarts per modality."),
        click.option("--contact-counts", type=str, default=None, help="Comma-separated probe counts."),
        click.option("--seed", type=int, default=None),
        click.option("--scene", "scene_file", type=EXISTING_FILE, default=None, help="Scene description file."),
    ]):
        fn = opt(fn)
    return fn


def _eval_cfg(config_path, resolution, sigma_g, k1, k2, n_icp, contact_counts, seed, scene_file):
    return _run(_config, config_path, resolution=resolution, sigma_g=sigma_g, k1=k1, k2=k2, n_icp=n_icp,
                contact_counts=contact_counts, seed=seed,
                scene_file=str(scene_file) if scene_file else None)


@main.command()
@config_option
@outdir_option
@_eval_options
def evaluate(config_path, output_dir, resolution, sigma_g, k1, k2, n_icp, contact_counts, seed, scene_file):
    """Pose error of every sensing modality over n ICP restarts.

    Writes metrics.csv (one row per modality) and boxplot-data.csv (one row
    per modality and restart).
    """
    cfg = _eval_cfg(config_path, resolution, sigma_g, k1, k2, n_icp, contact_counts, seed, scene_file)
    out = _outdir(output_dir, cfg)
    results = _run(run_evaluation, cfg, progress=lambda m: click.echo(m, err=True))
    write_metrics_csv(results, out / "metrics.csv")
    write_boxplot_csv(results, out / "boxplot-data.csv")
    click.echo(f"evaluate: {len(results)} modalities x {cfg.n_icp} restarts -> {out}")


SWEEP_PARAMS = {"k1": float, "k2": float, "sigma_g": float, "resolution": int, "lam": float, "eps": float,
                "mu": float, "n_icp": int, "seed": int, "force_magnitude": float, "sigma_tau": float}


@main.command()
@click.option("--param", required=True, type=click.Choice(sorted(SWEEP_PARAMS)), help="Parameter to vary.")
@click.option("--values", required=True, help="Comma-separated values.")
@config_option
@outdir_option
@_eval_options
def sweep(param, values, config_path, output_dir, resolution, sigma_g, k1, k2, n_icp, contact_counts, seed,
          scene_file):
    """Run evaluate once per value of one parameter.

    Each run goes to <output-dir>/<param>=<value>/; sweep.csv collects the
    mean ADD of every modality per value.
    """
    cfg = _eval_cfg(config_path, resolution, sigma_g, k1, k2, n_icp, contact_counts, seed, scene_file)
    try:
        vals = [SWEEP_PARAMS[param](v) for v in values.replace(",", " ").split()]
    except ValueError:
        raise click.BadParameter(f"cannot parse {values!r}", param_hint="--values") from None
    if not vals:
        raise click.BadParameter("no values given", param_hint="--values")
    out = _outdir(output_dir, cfg)
    rows = []
    for v in vals:
        run_cfg = _run(cfg.updated, **{param: v})
        sub = out / f"{param}={v}"
        sub.mkdir(parents=True, exist_ok=True)
        results = _run(run_evaluation, run_cfg, progress=lambda m: click.echo(m, err=True))
        write_metrics_csv(results, sub / "metrics.csv")
        write_boxplot_csv(results, sub / "boxplot-data.csv")
        write_config(run_cfg, sub / "config.ini")
        rows += [(v, r.name, r.n_contacts, r.adds.mean()) for r in results]
    with (out / "sweep.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([param, "modality", "n_contacts", "mean_add"])
        for v, name, n, mean in rows:
            writer.writerow([v, name, n, FLOAT_FMT % mean])
    click.echo(f"sweep: {param} over {len(vals)} values -> {out}")


# --- simulate-scene --------------------------------------------------------------

@main.command("simulate-scene")
@config_option
@outdir_option
@click.option("--scene", "scene_file", type=EXISTING_FILE, default=None, help="Scene description to reuse.")
@click.option("--k1", type=float, default=None)
@click.option("--k2", type=float, default=None)
@click.option("--contacts", type=int, default=5, show_default=True, help="Number of scripted probes.")
@click.option("--n-rays", type=int, default=None, help="Approximate ray count (default: camera resolution).")
@click.option("--seed", type=int, default=None)
def simulate_scene(config_path, output_dir, scene_file, k1, k2, contacts, n_rays, seed):
    """Synthesize a scene: meshes, noisy cloud, scripted wrench log.

    Writes scene.ini, hole.obj, peg.obj, cloud.ply, cloud_clean.ply,
    wrench.csv, truth.csv and scenario.ini (input for ``fuse``).
    """
    cfg = _run(_config, config_path, k1=k1, k2=k2, seed=seed,
               scene_file=str(scene_file) if scene_file else None)
    out = _outdir(output_dir, cfg)
    _run(_simulate, cfg, contacts, n_rays, out)


def _simulate(cfg: ExperimentConfig, contacts, n_rays, out):
    if contacts < 1:
        raise InputError("--contacts must be >= 1")
    scene = load_scene(cfg.scene_file) if cfg.scene_file else default_scene(cfg.seed)
    noise = DepthNoiseModel(cfg.k1, cfg.k2)
    write_obj(scene.hole, out / "hole.obj")
    write_obj(scene.peg, out / "peg.obj")
    write_scene(scene, out / "scene.ini", noise, "hole.obj", "peg.obj")
    cloud = render_cloud(scene, n_rays, noise, cfg.seed)
    write_point_cloud(cloud, out / "cloud.ply")
    write_point_cloud(render_cloud(scene, n_rays, DepthNoiseModel(0.0, cfg.k2), cfg.seed), out / "cloud_clean.ply")
    schedule = schedule_for_count(scene.hole_pose, contacts, cfg.rows, cfg.cols, cfg.pitch, cfg.depth)
    params = ContactParams(cfg.force_magnitude, cfg.sigma_f, cfg.sigma_tau, seed=cfg.seed)
    measurements, truths = scripted_probe_run(scene, schedule, params, out / "wrench.csv", out / "truth.csv")
    rv = " ".join(FLOAT_FMT % v for v in _rotvec(scene.hole_pose))
    tr = " ".join(FLOAT_FMT % v for v in scene.hole_pose.translation)
    (out / "scenario.ini").write_text(
        "[scenario]\ncloud = cloud.ply\nwrench_log = wrench.csv\npeg_mesh = peg.obj\nmodel_mesh = hole.obj\n"
        f"gt_rotvec = {rv}\ngt_translation = {tr}\n"
        f"rows = {cfg.rows}\ncols = {cfg.cols}\npitch = {FLOAT_FMT % cfg.pitch}\ndepth = {FLOAT_FMT % cfg.depth}\n"
        f"seed = {cfg.seed}\n")
    n_hit = sum(w.contact for w in measurements)
    click.echo(f"simulate-scene: {len(cloud)} cloud points, {n_hit}/{len(measurements)} probes in contact -> {out}")


def _rotvec(pose):
    return Rotation.from_matrix(pose.rotation).as_rotvec()


if __name__ == "__main__":
    main()
