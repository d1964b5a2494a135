"""kinrev: dynamics of a rigid body in a collisionless gas with diffuse
reflection -- velocity-reversal criteria, a deterministic recollision solver,
and a Monte Carlo particle oracle."""

from .equilibrium import BodyConfig, MotionClassParams
from .kernels import KernelSpec

__all__ = ["KernelSpec", "BodyConfig", "MotionClassParams"]
__version__ = "0.1.0"
