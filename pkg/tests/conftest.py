import numpy as np
import pytest

from contactfusion.contact import SensorConfig, mean_sample_spacing, sense_contacts
from contactfusion.geometry import OrientedPointSet, random_pose, sample_surface
from contactfusion.sim import default_scene, synthesize_wrench
from contactfusion.spsr import solve_poisson
from contactfusion.spsr.grid import VoxelGrid
from contactfusion.spsr.kernel import KernelConfig
from contactfusion.spsr.normal_field import fit_normal_field


def sphere_samples(n, seed=0, radius=1.0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return OrientedPointSet(radius * d, d)


def sphere_grid(K=32):
    # K cells spanning [-1.5, 1.5]^3
    return VoxelGrid(K, [-1.5, -1.5, -1.5], 3.0 / K)


@pytest.fixture(scope="session")
def sphere_cloud():
    return sphere_samples(2000, seed=0)


@pytest.fixture(scope="session")
def sphere_state(sphere_cloud):
    field = fit_normal_field(sphere_cloud, sphere_grid(32), KernelConfig())
    return solve_poisson(field)


@pytest.fixture(scope="session")
def small_sphere_state():
    cloud = sphere_samples(400, seed=3)
    return solve_poisson(fit_normal_field(cloud, sphere_grid(12), KernelConfig()))


_SCENE = {}


def localization_error(seed, sigma_tau=0.0, n_samples=5000):
    """Distance, in mean sample spacings, from the best sensed particle to
    the true contact for one synthetic reading at a random peg pose."""
    if "scene" not in _SCENE:
        _SCENE["scene"] = default_scene()
    scene = _SCENE["scene"]
    rng = np.random.default_rng(seed)
    pose = random_pose(rng, np.pi, 0.5)
    q = pose.apply(sample_surface(scene.peg, 1, seed + 7919).positions[0])
    w, _ = synthesize_wrench(scene, pose, q, 20.0, seed, sigma_tau=sigma_tau)
    hyp = sense_contacts(scene.peg, pose, w, SensorConfig(n_samples=n_samples, seed=seed))
    if hyp is None:
        return np.inf
    best = hyp.positions[hyp.best()]
    return np.linalg.norm(best - q) / mean_sample_spacing(scene.peg, n_samples)


ACCEPTANCE = []


def report(number, title, passed, detail):
    """Record one acceptance-criterion outcome for the end-of-run summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
