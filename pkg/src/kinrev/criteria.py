"""Reversal/irreversal criterion evaluation and parameter sweeps.

The sign of ``int k(0, z) a0(z + v_inf) dz - a0(v_inf)`` over the relevant
half-line decides whether the body's velocity crosses its terminal value: a
positive margin pins the velocity above equilibrium (irreversal), a negative
one forces a crossing (reversal).  Ground truth here is always the adaptive
quadrature; closed-form reductions are used only as test oracles inside their
validity regimes.  Within ``tol`` of the threshold the classifier refuses to
decide and reports Marginal, since the equality case is out of scope.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .kernels import KernelSpec, eval_a0, flux_response
from .quadrature import QuadratureError

SIDES = ("right", "left")

REVERSAL = "Reversal"
IRREVERSAL = "Irreversal"
MARGINAL = "Marginal"


@dataclass(frozen=True)
class CriterionReport:
    integral_value: float
    threshold: float
    margin: float
    classification: str
    side: str
    v_inf: float

    def to_row(self) -> dict:
        return {
            "v_inf": self.v_inf,
            "side": self.side,
            "integral": self.integral_value,
            "threshold": self.threshold,
            "margin": self.margin,
            "class": self.classification,
        }


def criterion_integral(spec: KernelSpec, v_inf: float, side: str = "right",
                       abs_tol: float = 1e-10) -> float:
    """The criterion integral over the chosen half-line.

    ``side='right'`` integrates the post-collision density of particles just
    ahead of the body's velocity (the ones that can recollide when the body
    starts above equilibrium); ``side='left'`` is the mirrored variant for a
    body starting below equilibrium.
    """
    if v_inf < 0:
        raise ValueError("v_inf must be >= 0")
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    return flux_response(spec, 0.0, float(v_inf), side=side, abs_tol=abs_tol)


def classify(spec: KernelSpec, v_inf: float, side: str = "right",
             tol: float = 1e-9) -> CriterionReport:
    """Three-way classification of a kernel-equilibrium configuration."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    integral = criterion_integral(spec, v_inf, side)
    threshold = eval_a0(spec, v_inf)
    margin = integral - threshold
    if margin > tol:
        cls = IRREVERSAL
    elif margin < -tol:
        cls = REVERSAL
    else:
        cls = MARGINAL
    return CriterionReport(integral_value=integral, threshold=threshold,
                           margin=margin, classification=cls, side=side,
                           v_inf=float(v_inf))


SWEEP_KEYS = ("alpha", "beta", "v_inf", "m")


def _sweep_point(args):
    index, template_json, overrides, side, tol = args
    v_inf = overrides.pop("v_inf", 0.0)
    try:
        spec = KernelSpec.from_json({**template_json, **overrides})
        report = classify(spec, v_inf, side=side, tol=tol)
        row = {"alpha": spec.alpha, "beta": spec.beta, "v_inf": v_inf,
               "m": spec.m, **{k: v for k, v in report.to_row().items() if k != "v_inf"},
               "error": ""}
    except (ValueError, QuadratureError) as exc:
        row = {"alpha": overrides.get("alpha", template_json.get("alpha")),
               "beta": overrides.get("beta", template_json.get("beta")),
               "v_inf": v_inf, "m": overrides.get("m", template_json.get("m")),
               "side": side, "integral": float("nan"), "threshold": float("nan"),
               "margin": float("nan"), "class": "Error", "error": str(exc)}
    return index, row


def sweep(spec_template: KernelSpec, grid: dict, side: str = "right",
          tol: float = 1e-9, jobs: int = 1) -> list[dict]:
    """Classify every point of a cartesian parameter grid.

    ``grid`` maps a subset of {alpha, beta, v_inf, m} to value lists.  Points
    are distributed over ``jobs`` workers; each point is independent and
    per-point failures are recorded in the row instead of aborting.  Rows come
    back in grid (itertools.product) order regardless of the worker count.
    """
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown sweep key {sorted(unknown)[0]!r}")
    keys = [k for k in SWEEP_KEYS if k in grid]
    values = [grid[k] for k in keys]
    template_json = spec_template.to_json()
    tasks = []
    for index, combo in enumerate(itertools.product(*values)):
        overrides = dict(zip(keys, combo))
        tasks.append((index, template_json, overrides, side, tol))
    if not tasks:
        return []
    if jobs <= 1:
        results = [_sweep_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks, chunksize=8))
    results.sort(key=lambda pair: pair[0])
    return [row for _, row in results]


def classification_for_modes(spec: KernelSpec, v_inf: float, tol: float = 1e-9) -> str:
    """Classification used to pick the solver mode (right side, the primary
    orientation with the body starting above equilibrium)."""
    return classify(spec, v_inf, side="right", tol=tol).classification
