"""Post-processing: reversal detection, tail-exponent fits, envelope checks.

Works on plain (times, values) arrays so it can digest deterministic
trajectories and Monte Carlo means alike.  The envelope machinery fits the
smallest/largest amplitudes that make the mode's two-sided
exponential-plus-power envelopes hold at every grid node; the underlying
bounds are existence statements with free constants, so the fitted values are
empirical counterparts, not reproductions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import MotionClassParams

_TINY = 1e-300
_SLACK = 1e-12  # absolute tolerance for envelope inequalities at grid nodes


@dataclass(frozen=True)
class ReversalReport:
    crossed: bool
    t_cross: float | None
    n_crossings: int


@dataclass(frozen=True)
class RateFit:
    window: tuple[float, float]
    slope: float
    r_squared: float
    expected: float | None
    n_points: int


def detect_reversal(times, values, v_inf: float, noise_floor: float = 0.0) -> ReversalReport:
    """Count sign changes of V - v_inf that clear the noise floor on both sides.

    ``noise_floor`` is 0 for deterministic input; for Monte Carlo input pass a
    standard-error scale so that noise wiggles around zero do not register.
    The crossing time comes from linear interpolation between the bracketing
    significant samples of the first change.
    """
    if noise_floor < 0:
        raise ValueError("noise_floor must be >= 0")
    times = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float) - v_inf
    sig = np.abs(y) > noise_floor if noise_floor > 0 else y != 0.0
    idx = np.nonzero(sig)[0]
    if idx.size < 2:
        return ReversalReport(crossed=False, t_cross=None, n_crossings=0)
    ys = y[idx]
    ts = times[idx]
    flips = np.nonzero(ys[:-1] * ys[1:] < 0)[0]
    n = int(flips.size)
    if n == 0:
        return ReversalReport(crossed=False, t_cross=None, n_crossings=0)
    j = flips[0]
    t0, t1, y0, y1 = ts[j], ts[j + 1], ys[j], ys[j + 1]
    t_cross = t0 + (t1 - t0) * y0 / (y0 - y1)
    return ReversalReport(crossed=True, t_cross=float(t_cross), n_crossings=n)


def fit_tail_exponent(times, values, v_inf: float, window: tuple[float, float],
                      expected: float | None = None) -> RateFit:
    """Least-squares slope of log|V - v_inf| against log t on a window.

    The window must lie inside the grid, span at least a factor 5 in t,
    contain at least 10 nodes, and |V - v_inf| must be single-signed and
    nonvanishing on it.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t_a, t_b = window
    if not (0 < t_a < t_b):
        raise ValueError("window must satisfy 0 < t_a < t_b")
    if t_b < 5.0 * t_a:
        raise ValueError(f"window [{t_a}, {t_b}] spans less than a factor 5")
    if t_a < times[0] - 1e-12 or t_b > times[-1] + 1e-12:
        raise ValueError("window extends outside the trajectory grid")
    mask = (times >= t_a) & (times <= t_b)
    if mask.sum() < 10:
        raise ValueError(f"degenerate window: only {int(mask.sum())} nodes")
    y = values[mask] - v_inf
    if np.any(y == 0.0) or (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("V - v_inf changes sign or vanishes inside the window")
    lt = np.log(times[mask])
    ly = np.log(np.abs(y))
    slope, intercept = np.polyfit(lt, ly, 1)
    pred = slope * lt + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(window=(float(t_a), float(t_b)), slope=float(slope),
                   r_squared=r2, expected=expected, n_points=int(mask.sum()))


def expected_rate(params: MotionClassParams) -> float:
    return -(params.d + params.p)


def default_tail_window(t0: float, t_max: float) -> tuple[float, float]:
    """Default fit window: past the exponential transient, inside the grid.

    Nominally [max(5 t0, t_max/5), t_max/1.05]; when that span falls short of
    the factor-5 floor the lower end is pulled down (the transient at 5 t0
    still wins if the two are incompatible, which raises in the fit).
    """
    hi = t_max / 1.05
    lo = max(5.0 * t0, t_max / 5.0)
    if hi < 5.0 * lo:
        lo = max(5.0 * t0, hi / 5.0)
    return lo, hi


def fit_envelope_constants(times, values, v_inf: float, params: MotionClassParams,
                           mode: str | None = None) -> dict:
    """Fit envelope amplitudes for the mode's two-sided bound at every node.

    Irreversal: gamma e^(-B0 t) + A+ gamma^(p+1) t^-(p+d) [t >= t0+1]
                <= V - v_inf <= gamma e^(-Binf t) + A- gamma^(p+1) (1+t)^-(p+d).
    Reversal:   gamma e^(-B0 t) - A+ gamma^(p+1) (1+t)^-(p+d)
                <= V - v_inf <= gamma e^(-Binf t) - A- gamma^(p+1) t^-(p+d) [t >= t0+1].

    ``lower_ok``/``upper_ok`` flag whether positive finite amplitudes exist;
    in reversal mode the bracket additionally needs A- <= A+.
    """
    mode = mode or params.mode
    times = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float) - v_inf
    g, B0, Bi = params.gamma, params.B0, params.B_inf
    p, d, t0 = params.p, params.d, params.t0
    gp1 = g ** (p + 1.0)
    pos = times > 0
    tt = times[pos]
    yy = y[pos]
    late = tt >= t0 + 1.0
    exp_fast = g * np.exp(-B0 * tt)
    exp_slow = g * np.exp(-Bi * tt)
    out: dict = {"mode": mode}
    if mode == "irreversal":
        slack_lower = yy - exp_fast
        if late.any():
            a_plus = float(np.min(slack_lower[late] * tt[late] ** (p + d) / gp1))
        else:
            a_plus = math.inf
        early_ok = bool(np.all(slack_lower[~late] >= -_SLACK))
        a_minus_req = np.max((yy - exp_slow) * (1.0 + tt) ** (p + d) / gp1)
        a_minus = float(max(a_minus_req, _TINY))
        out.update(A_plus=a_plus, A_minus=a_minus, early_ok=early_ok,
                   lower_ok=bool(a_plus > 0 and math.isfinite(a_plus) and early_ok),
                   upper_ok=bool(math.isfinite(a_minus)),
                   lower_ok_weak=bool(a_plus >= -_SLACK / gp1 and early_ok),
                   upper_ok_weak=bool(math.isfinite(a_minus)),
                   order_ok=bool(a_plus <= a_minus))
    elif mode == "reversal":
        a_plus_req = np.max((exp_fast - yy) * (1.0 + tt) ** (p + d) / gp1)
        a_plus = float(max(a_plus_req, _TINY))
        slack_upper = exp_slow - yy
        if late.any():
            a_minus = float(np.min(slack_upper[late] * tt[late] ** (p + d) / gp1))
        else:
            a_minus = math.inf
        early_ok = bool(np.all(slack_upper[~late] >= -_SLACK))
        out.update(A_plus=a_plus, A_minus=a_minus, early_ok=early_ok,
                   lower_ok=bool(math.isfinite(a_plus)),
                   upper_ok=bool(a_minus > 0 and math.isfinite(a_minus) and early_ok),
                   lower_ok_weak=bool(math.isfinite(a_plus)),
                   upper_ok_weak=bool(a_minus >= -_SLACK / gp1 and early_ok),
                   order_ok=bool(a_minus <= a_plus))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out


def envelope_curves(times, params: MotionClassParams, a_plus: float, a_minus: float,
                    mode: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the fitted envelopes (as offsets from v_inf) on a time grid."""
    mode = mode or params.mode
    times = np.asarray(times, dtype=float)
    g, p, d, t0 = params.gamma, params.p, params.d, params.t0
    gp1 = g ** (p + 1.0)
    tt = np.where(times > 0, times, np.inf)
    chi = (times >= t0 + 1.0).astype(float)
    if mode == "irreversal":
        lo = g * np.exp(-params.B0 * times) + a_plus * gp1 * chi / tt ** (p + d)
        hi = g * np.exp(-params.B_inf * times) + a_minus * gp1 / (1.0 + times) ** (p + d)
    else:
        lo = g * np.exp(-params.B0 * times) - a_plus * gp1 / (1.0 + times) ** (p + d)
        hi = g * np.exp(-params.B_inf * times) - a_minus * gp1 * chi / tt ** (p + d)
    return lo, hi


def verify_envelopes(times, values, v_inf: float, params: MotionClassParams,
                     mode: str | None = None) -> dict:
    """Envelope verification report for a converged trajectory.

    Fits the constants, evaluates the fitted curves, and in reversal mode
    additionally verifies that the trajectory stays below equilibrium past
    the point where the fitted upper envelope turns negative.
    """
    mode = mode or params.mode
    fit = fit_envelope_constants(times, values, v_inf, params, mode)
    times = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float) - v_inf
    report = dict(fit)
    report["fitted_constants"] = {"lower": fit["A_plus"], "upper": fit["A_minus"]}
    if mode == "reversal" and fit["upper_ok"]:
        lo, hi = envelope_curves(times, params, fit["A_plus"], fit["A_minus"], mode)
        neg = np.nonzero(hi < 0)[0]
        if neg.size:
            t_crossover = float(times[neg[0]])
            ok = bool(np.all(y[times >= t_crossover] < 0))
            report["crossover_t"] = t_crossover
            report["negative_after_crossover_ok"] = ok
        else:
            report["crossover_t"] = None
            report["negative_after_crossover_ok"] = False
    return report
