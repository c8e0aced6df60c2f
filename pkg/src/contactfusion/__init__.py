"""Surface maps for peg-in-hole: a Gaussian posterior over an implicit
surface fitted to depth points, refined with force/torque contacts."""

__version__ = "0.1.0"

from .exceptions import ContactFusionError, InputError  # noqa: E402
from .geometry import OrientedPointSet, Pose, TriangleMesh  # noqa: E402
from .spsr import StochasticPoissonSurface  # noqa: E402

__all__ = [
    "ContactFusionError",
    "InputError",
    "OrientedPointSet",
    "Pose",
    "StochasticPoissonSurface",
    "TriangleMesh",
    "__version__",
]
