"""Adaptive quadrature helpers for half-line and finite-interval integrals.

All module-level integrals in this package (kernel moments, forces, criterion
integrals) go through these wrappers.  Semi-infinite integrals are mapped onto
(0, 1] via ``v = (1 - s) / s`` and handed to an adaptive subdivision routine
with an absolute tolerance; a failure to converge raises
:class:`QuadratureError` carrying the achieved error estimate.
"""

from __future__ import annotations

import warnings
from typing import Callable

import numpy as np
from scipy import integrate


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance.

    Attributes
    ----------
    estimate : float
        The value of the integral as far as it was computed.
    error_estimate : float
        The error estimate achieved when the routine gave up.
    """

    def __init__(self, message: str, estimate: float, error_estimate: float):
        super().__init__(f"{message} (value={estimate:.6e}, err={error_estimate:.3e})")
        self.estimate = estimate
        self.error_estimate = error_estimate


def integrate_interval(f: Callable[[float], float], a: float, b: float,
                       abs_tol: float = 1e-10) -> float:
    """Adaptive integral of ``f`` over the finite interval [a, b]."""
    if a == b:
        return 0.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=abs_tol, epsrel=1e-11, limit=200)
    trouble = [w for w in caught if issubclass(w.category, integrate.IntegrationWarning)]
    if not np.isfinite(val):
        raise QuadratureError("non-finite integral", val, err)
    if trouble and err > 100 * max(abs_tol, 1e-12 * abs(val)):
        raise QuadratureError(str(trouble[0].message), val, err)
    return val


def integrate_half_line(f: Callable[[float], float], lower: float = 0.0,
                        abs_tol: float = 1e-10) -> float:
    """Adaptive integral of ``f`` over [lower, infinity).

    The substitution ``v = lower + (1 - s)/s`` maps the half-line to (0, 1];
    the mapped integrand is then integrated adaptively.  Integrands must decay
    fast enough for the mapped integral to be proper (all built-in kernels
    decay at least algebraically with power > 2).
    """

    def mapped(s: float) -> float:
        v = lower + (1.0 - s) / s
        return f(v) / (s * s)

    return integrate_interval(mapped, 0.0, 1.0, abs_tol=abs_tol)


def gauss_legendre_nodes(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def half_line_fixed_rule(n_per_panel: int = 48,
                         breaks: tuple[float, ...] = (0.0, 1e-3, 0.1, 1.0, 8.0),
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Fixed composite rule for smooth, decaying integrands on [0, inf).

    Panels cover [breaks[0], breaks[-1]] directly; the remaining tail is
    mapped onto (0, 1] with ``v = breaks[-1] + (1 - s)/s``.  Returns plain
    node/weight arrays (tail weights already include the Jacobian), so a
    vectorised integrand can be evaluated in one shot.  Used to build lookup
    tables for hot loops; accuracy is checked against the adaptive routine in
    the test suite.
    """
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        x, w = gauss_legendre_nodes(n_per_panel, a, b)
        nodes.append(x)
        weights.append(w)
    s, ws = gauss_legendre_nodes(n_per_panel, 0.0, 1.0)
    nodes.append(breaks[-1] + (1.0 - s) / s)
    weights.append(ws / (s * s))
    return np.concatenate(nodes), np.concatenate(weights)


def graded_band_rule(lo: float, hi: float, n_panels: int = 8, n_per_panel: int = 32,
                     grade_toward_lo: bool = True, ratio: float = 0.35,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [lo, hi] with geometric panel refinement.

    Panel widths shrink geometrically toward the graded endpoint, which keeps
    the rule accurate for integrands with an |u - lo|**p cusp (p possibly
    < 1).
    """
    if hi <= lo:
        return np.empty(0), np.empty(0)
    edges = np.empty(n_panels + 1)
    width = hi - lo
    # cumulative geometric edges measured from the graded endpoint
    t = np.concatenate(([0.0], np.cumsum(ratio ** np.arange(n_panels)[::-1])))
    t /= t[-1]
    if grade_toward_lo:
        edges = lo + width * t
    else:
        edges = hi - width * t[::-1]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre_nodes(n_per_panel, a, b)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def normalized_band_rule(n_panels: int = 8, n_per_panel: int = 32,
                         grade_toward_lo: bool = True, ratio: float = 0.35,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """The graded band rule on [0, 1], reusable for every band via scaling."""
    return graded_band_rule(0.0, 1.0, n_panels, n_per_panel, grade_toward_lo, ratio)
