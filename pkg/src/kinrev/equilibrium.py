"""Single-collision force, equilibrium velocity and motion-class constants.

The single-collision force ``F0(w)`` is the drag the body would feel if every
particle collided at most once: the momentum-transfer weight ``ell`` applied
to the unperturbed density on both faces.  Its root ``F0(v_inf) = E`` defines
the terminal velocity, and the extrema of ``F0'`` over the initial velocity
window give the exponential rate constants of the motion class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, a0_scalar, ell_scalar
from .quadrature import integrate_half_line


class BracketError(RuntimeError):
    """The external force exceeds the single-collision drag on the search
    bracket; the configuration is unphysically strong."""


@dataclass(frozen=True)
class BodyConfig:
    """Geometry and forcing of the moving cylinder.

    ``face_area`` is derived from the cross-section radius: 1, 2r, or pi r^2
    for dim 1, 2, 3.  ``gamma`` is the initial velocity offset above the
    equilibrium velocity, constrained to (0, 1).
    """

    dim: int = 3
    radius: float = 1.0
    E: float = 0.0
    gamma: float = 0.05
    face_area: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"body dim must be 1, 2 or 3, got {self.dim}")
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.E < 0:
            raise ValueError(f"E must be >= 0, got {self.E}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.dim == 1:
            area = 1.0
        elif self.dim == 2:
            area = 2.0 * self.radius
        else:
            area = math.pi * self.radius ** 2
        object.__setattr__(self, "face_area", area)

    def initial_velocity(self, v_inf: float) -> float:
        return v_inf + self.gamma

    def to_json(self) -> dict:
        return {"dim": self.dim, "radius": self.radius, "E": self.E, "gamma": self.gamma}

    @classmethod
    def from_json(cls, obj: dict) -> "BodyConfig":
        known = {"dim", "radius", "E", "gamma"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown body key {sorted(unknown)[0]!r}")
        return cls(**obj)


@dataclass
class MotionClassParams:
    """Scalar constants of the candidate-motion class.

    ``B0``/``B_inf`` are the max/min of ``F0'`` over the initial window,
    ``t0`` the guaranteed-decrease horizon, and ``A_plus``/``A_minus`` the
    envelope amplitudes (initialized to 1 and refined a posteriori from
    solver iterates).
    """

    gamma: float
    v_inf: float
    B0: float
    B_inf: float
    A_plus: float
    A_minus: float
    t0: float
    K0: float
    p: float
    d: int
    mode: str  # "irreversal" | "reversal"


def f0_force(spec: KernelSpec, body: BodyConfig, w: float, abs_tol: float = 1e-10) -> float:
    """Single-collision force on a body moving at velocity w.

    Evaluated as ``face_area * int_0^inf ell(z) (a0(w - z) - a0(w + z)) dz``
    (the transverse density integrates to one); strictly increasing in w.
    """
    code, par = spec.family_code, spec.params()
    w = float(w)

    def integrand(z: float) -> float:
        return ell_scalar(code, par, z) * (a0_scalar(code, par, w - z)
                                           - a0_scalar(code, par, w + z))

    return body.face_area * integrate_half_line(integrand, abs_tol=abs_tol)


def f0_derivative(spec: KernelSpec, body: BodyConfig, w: float) -> float:
    """Derivative of the single-collision force.

    Central finite difference with step 1e-5 * max(1, |w|), Richardson
    extrapolated once.
    """
    h = 1e-5 * max(1.0, abs(w))

    def central(step: float) -> float:
        return (f0_force(spec, body, w + step) - f0_force(spec, body, w - step)) / (2 * step)

    d1 = central(h)
    d2 = central(h / 2)
    return (4.0 * d2 - d1) / 3.0


def solve_equilibrium(spec: KernelSpec, body: BodyConfig, bracket: float = 10.0,
                      residual_tol: float = 1e-10) -> float:
    """Terminal velocity from F0(v) = E by bisection plus secant refinement."""
    E = body.E
    if E < 0:
        raise ValueError("E must be >= 0")
    if E == 0.0:
        return 0.0
    lo, hi = 0.0, bracket
    f_lo = -E
    f_hi = f0_force(spec, body, hi) - E
    if f_hi < 0:
        raise BracketError(
            f"F0({hi}) = {f_hi + E:.6e} < E = {E:.6e}; no equilibrium on [0, {hi}]")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = f0_force(spec, body, mid) - E
        if abs(f_mid) <= residual_tol:
            return mid
        if f_mid < 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        # secant refinement once the bracket is tight
        if hi - lo < 1e-6 * max(1.0, hi):
            break
    x0, x1, f0_, f1_ = lo, hi, f_lo, f_hi
    for _ in range(20):
        if f1_ == f0_:
            break
        x2 = x1 - f1_ * (x1 - x0) / (f1_ - f0_)
        x2 = min(max(x2, lo), hi)
        f2 = f0_force(spec, body, x2) - E
        if abs(f2) <= residual_tol:
            return x2
        x0, f0_, x1, f1_ = x1, f1_, x2, f2
    return x1


def motion_class_params(spec: KernelSpec, body: BodyConfig, mode: str,
                        v_inf: float | None = None, n_grid: int = 64) -> MotionClassParams:
    """Rate constants and horizon for the chosen mode.

    ``B0``/``B_inf`` are scanned on an ``n_grid``-point grid over
    [v_inf - gamma, v_inf + gamma]; whether interior points or endpoints
    dominate is kernel-dependent, so no shortcut is taken.  In reversal mode
    ``K0`` sits at the midpoint 1.5/B0 of its admissible band.
    """
    if mode not in ("irreversal", "reversal"):
        raise ValueError(f"mode must be 'irreversal' or 'reversal', got {mode!r}")
    if v_inf is None:
        v_inf = solve_equilibrium(spec, body)
    gamma = body.gamma
    grid = np.linspace(v_inf - gamma, v_inf + gamma, n_grid)
    derivs = np.array([f0_derivative(spec, body, w) for w in grid])
    B0 = float(derivs.max())
    B_inf = float(derivs.min())
    if B_inf <= 0.0:
        raise ValueError(
            f"degenerate kernel: F0' reaches {B_inf:.3e} on the initial window")
    if mode == "irreversal":
        t0 = abs(math.log(gamma))
        K0 = math.nan
    else:
        K0 = 1.5 / B0
        t0 = K0 * abs(math.log(gamma))
    return MotionClassParams(gamma=gamma, v_inf=v_inf, B0=B0, B_inf=B_inf,
                             A_plus=1.0, A_minus=1.0, t0=t0, K0=K0,
                             p=spec.p_declared, d=body.dim, mode=mode)


def f0_interpolant(spec: KernelSpec, body: BodyConfig, center: float,
                   half_width: float, degree: int = 32):
    """Chebyshev interpolant of F0 on [center - hw, center + hw].

    F0 is analytic on the tiny window the solver visits, so a modest degree
    reaches machine accuracy; the solver evaluates the relaxation rate Q from
    this interpolant instead of re-running quadratures per grid node.
    """
    k = np.arange(degree + 1)
    nodes = center + half_width * np.cos(math.pi * k / degree)
    vals = np.array([f0_force(spec, body, x) for x in nodes])
    series = np.polynomial.chebyshev.Chebyshev.fit(
        nodes, vals, deg=degree, domain=[center - half_width, center + half_width])
    return series
