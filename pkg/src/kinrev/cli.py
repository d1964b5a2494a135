"""Command line interface: config parsing, dispatch, CSV emission.

A single JSON config document carries per-subcommand sections (kernel, body,
solver, mc, sweep) plus an output directory and the master seed; flags
override config values.  Parsing is strict: unknown keys anywhere fail fast
with the offending key named.  All output CSVs use 17-significant-digit
scientific formatting so reruns are byte-identical.

Exit codes: 0 success, 1 config error, 2 numerical non-convergence,
3 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import default_tail_window, detect_reversal, fit_tail_exponent
from .criteria import classify, sweep as run_sweep
from .equilibrium import BodyConfig, motion_class_params, solve_equilibrium
from .kernels import KernelSpec, check_mass_conservation, check_power_law
from .montecarlo import MCConfig, MCResult, run as mc_run, static_force_estimate
from .solver import NonConvergenceError, SolverConfig, SolverProblem, fixed_point_solve


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kernel: KernelSpec
    body: BodyConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    sweep: dict = field(default_factory=dict)
    output_dir: str = "."
    seed: int | None = None


_TOP_KEYS = {"kernel", "body", "solver", "mc", "sweep", "output_dir", "seed"}


def parse_config(path: str) -> RunConfig:
    """Load and validate the JSON config document.

    Raises :class:`ConfigError` with a field-path-precise message on any
    unknown key or out-of-range value.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    if "kernel" not in raw:
        raise ConfigError("missing required section 'kernel'")

    def section(name, cls):
        obj = raw.get(name)
        if obj is None:
            return None
        try:
            return cls.from_json(obj)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{name}: {exc}")

    kernel = section("kernel", KernelSpec)
    body = section("body", BodyConfig)
    solver = section("solver", SolverConfig) or SolverConfig()
    mc = section("mc", MCConfig) or MCConfig()
    sweep_grid = raw.get("sweep", {})
    if not isinstance(sweep_grid, dict):
        raise ConfigError("sweep: must be an object mapping parameter -> list")
    seed = raw.get("seed")
    if seed is not None:
        mc = MCConfig.from_json({**mc.to_json(), "seed": int(seed)})
    return RunConfig(kernel=kernel, body=body, solver=solver, mc=mc,
                     sweep=sweep_grid, output_dir=raw.get("output_dir", "."),
                     seed=seed)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    v = float(x)
    if math.isnan(v):
        return "nan"
    return f"{v:.16e}"


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: [] for name in header}
        for row in reader:
            for name, val in zip(header, row):
                cols[name].append(float(val) if val not in ("",) else math.nan)
    return {name: np.array(vals) for name, vals in cols.items()}


def _require_body(cfg: RunConfig) -> BodyConfig:
    if cfg.body is None:
        raise ConfigError("missing required section 'body'")
    if cfg.body.dim != cfg.kernel.dim:
        raise ConfigError(
            f"body.dim = {cfg.body.dim} does not match kernel.dim = {cfg.kernel.dim}")
    return cfg.body


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_validate_kernel(cfg: RunConfig, args) -> int:
    spec = cfg.kernel
    grid = [1e-3, -1e-3, 1e-2, -1e-2, 1e-1, -1e-1, 1.0, -1.0]
    rep = check_mass_conservation(spec, grid, tol=args.tol)
    rows = [(r["u"], r["integral"], r["target"], r["abs_error"]) for r in rep["rows"]]
    out = Path(cfg.output_dir) / "kernel_validation.csv"
    write_csv(out, ["u", "integral", "target", "abs_error"], rows)
    power = check_power_law(spec, gamma=args.gamma)
    ok = rep["pass"] and abs(power["p_est"] - spec.p_declared) <= 0.05 \
        and power["monotone_ok"]
    print(f"validate-kernel {spec.family}: mass_max_err={rep['max_abs_error']:.3e} "
          f"p_est={power['p_est']:.4f} p_declared={spec.p_declared} "
          f"{'PASS' if ok else 'FAIL'} -> {out}")
    return 0 if ok else 2


def _cmd_equilibrium(cfg: RunConfig, args) -> int:
    body = _require_body(cfg)
    v_inf = solve_equilibrium(cfg.kernel, body)
    params = motion_class_params(cfg.kernel, body, args.mode, v_inf=v_inf)
    out = Path(cfg.output_dir) / "equilibrium.csv"
    write_csv(out, ["v_inf", "B0", "B_inf", "t0"],
              [(v_inf, params.B0, params.B_inf, params.t0)])
    print(f"equilibrium: v_inf={v_inf:.12e} B0={params.B0:.6e} "
          f"B_inf={params.B_inf:.6e} t0={params.t0:.6e} -> {out}")
    return 0


def _cmd_criterion(cfg: RunConfig, args) -> int:
    report = classify(cfg.kernel, args.v_inf, side=args.side, tol=args.tol)
    out = Path(cfg.output_dir) / "criterion.csv"
    write_csv(out, ["v_inf", "side", "integral", "threshold", "margin", "class"],
              [(report.v_inf, report.side, report.integral_value,
                report.threshold, report.margin, report.classification)])
    print(f"criterion: {report.classification} margin={report.margin:.6e} -> {out}")
    return 0


def _cmd_sweep(cfg: RunConfig, args) -> int:
    rows = run_sweep(cfg.kernel, cfg.sweep, side=args.side, tol=args.tol,
                     jobs=args.jobs)
    out = Path(cfg.output_dir) / "sweep.csv"
    write_csv(out, ["alpha", "beta", "v_inf", "m", "side", "integral",
                    "threshold", "margin", "class"],
              [(r["alpha"], r["beta"], r["v_inf"], r["m"], r["side"],
                r["integral"], r["threshold"], r["margin"], r["class"])
               for r in rows])
    n_err = sum(1 for r in rows if r["class"] == "Error")
    print(f"sweep: {len(rows)} points, {n_err} failures -> {out}")
    return 0


def _cmd_solve(cfg: RunConfig, args) -> int:
    body = _require_body(cfg)
    solver_cfg = cfg.solver
    overrides = {}
    if args.t_max is not None:
        overrides["t_max"] = args.t_max
    if args.steps is not None:
        overrides["n_steps"] = args.steps
    if args.depth is not None:
        overrides["depth_n"] = args.depth
    if args.fp_tol is not None:
        overrides["fp_tol"] = args.fp_tol
    if overrides:
        solver_cfg = SolverConfig.from_json({**solver_cfg.to_json(), **overrides})
    problem = SolverProblem(cfg.kernel, body, mode=args.mode, config=solver_cfg)
    result = fixed_point_solve(problem)
    tt = result.trajectory.times
    V = result.trajectory.values
    out = Path(cfg.output_dir) / "trajectory.csv"
    write_csv(out, ["t", "V", "V_minus_Vinf", "R_W", "r_L", "r_R",
                    "class_envelope_lo", "class_envelope_hi"],
              zip(tt, V, V - result.v_inf, result.R, result.r_l, result.r_r,
                  result.envelope_lo, result.envelope_hi))
    print(f"solve: mode={result.mode} v_inf={result.v_inf:.6e} "
          f"iterations={result.iterations} residual={result.final_residual:.3e} -> {out}")
    return 0


def _cmd_mc(cfg: RunConfig, args) -> int:
    body = _require_body(cfg)
    mc = cfg.mc
    overrides = {}
    if args.particles is not None:
        overrides["n_particles"] = args.particles
    if args.replicas is not None:
        overrides["replicas"] = args.replicas
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.t_max is not None:
        overrides["t_max"] = args.t_max
    if overrides:
        mc = MCConfig.from_json({**mc.to_json(), **overrides})
    if mc.n_particles < 1:
        raise ConfigError("mc.n_particles must be >= 1")
    v_inf = solve_equilibrium(cfg.kernel, body)
    if args.static_w is not None:
        est = static_force_estimate(cfg.kernel, body, mc, w=args.static_w,
                                    jobs=args.jobs)
        out = Path(cfg.output_dir) / "mc_static.csv"
        write_csv(out, ["w", "force_mean", "force_se", "n_collisions"],
                  [(args.static_w, est["force_mean"], est["force_se"],
                    est["n_collisions"])])
        print(f"mc static: F({args.static_w}) = {est['force_mean']:.6e} "
              f"+- {est['force_se']:.2e} -> {out}")
        return 0
    result = mc_run(cfg.kernel, body, mc, v_inf=v_inf, jobs=args.jobs)
    out = Path(cfg.output_dir) / "mc.csv"
    write_csv(out, ["t", "V_mean", "V_se", "n_collisions_cum"],
              zip(result.times, result.v_mean, result.v_se, result.collisions_cum))
    print(f"mc: replicas={mc.replicas} n={mc.n_particles} collisions~"
          f"{result.collisions_cum[-1]:.0f} unsafe_escapes={result.unsafe_escapes} -> {out}")
    if result.unsafe_escapes:
        print("warning: escaping particles could have re-hit the body; "
              "increase box_half_length", file=sys.stderr)
    return 0


def _cmd_compare(cfg: RunConfig, args) -> int:
    det = read_trajectory_csv(args.det_csv)
    mc_cols = read_trajectory_csv(args.mc_csv)
    v_inf = float(args.v_inf) if args.v_inf is not None else \
        solve_equilibrium(cfg.kernel, _require_body(cfg))
    times = mc_cols["t"]
    n_rep = 2  # reconstructed result carries only mean/se bands
    result = MCResult(times=times, v_mean=mc_cols["V_mean"], v_se=mc_cols["V_se"],
                      v_replicas=np.vstack([mc_cols["V_mean"], mc_cols["V_mean"]]),
                      collisions_cum=mc_cols["n_collisions_cum"],
                      ledgers=np.zeros(n_rep), t_end=float(times[-1]),
                      weight=0.0, escapes=0, unsafe_escapes=0,
                      dropped_injections=0, ledger_residual=0.0)
    report = _compare_from_bands(result, det["t"], det["V"], v_inf)
    out = Path(cfg.output_dir) / "compare.csv"
    write_csv(out, ["max_abs_z", "frac_within_3sigma", "det_verdict",
                    "mc_verdict", "class_agreement"],
              [(report["max_abs_z"], report["frac_within_3sigma"],
                report["det_verdict"], report["mc_verdict"],
                report["class_agreement"])])
    print(f"compare: max|z|={report['max_abs_z']:.3f} "
          f"within3sigma={report['frac_within_3sigma']:.3f} "
          f"agreement={report['class_agreement']} -> {out}")
    return 0


def _compare_from_bands(result: MCResult, det_times, det_values, v_inf: float) -> dict:
    """Band comparison when only mean/SE columns are available (CSV route):
    the MC verdict falls back to a mean-trajectory significance scan."""
    det_on_mc = np.interp(result.times, np.asarray(det_times), np.asarray(det_values))
    se = result.v_se
    ok = se > 0
    z = np.zeros_like(se)
    z[ok] = (det_on_mc[ok] - result.v_mean[ok]) / se[ok]
    within3 = float(np.mean(np.abs(z[ok]) <= 3.0)) if ok.any() else 1.0
    det_report = detect_reversal(det_times, det_values, v_inf)
    det_verdict = "Reversal" if det_report.crossed else "Irreversal"
    late = result.times >= 0.25 * result.times[-1]
    y = result.v_mean[late] - v_inf
    se_late = result.v_se[late]
    sig_neg = (y < 0) & (np.abs(y) > 3 * np.where(se_late > 0, se_late, np.inf))
    mc_verdict = "Reversal" if sig_neg.any() else "Irreversal"
    return {"max_abs_z": float(np.max(np.abs(z[ok]))) if ok.any() else 0.0,
            "frac_within_3sigma": within3, "det_verdict": det_verdict,
            "mc_verdict": mc_verdict, "class_agreement": det_verdict == mc_verdict}


def _cmd_fit(cfg_unused, args) -> int:
    cols = read_trajectory_csv(args.trajectory_csv)
    tt, V = cols["t"], cols["V"]
    v_inf = args.v_inf if args.v_inf is not None else \
        (V[-1] - cols["V_minus_Vinf"][-1] if "V_minus_Vinf" in cols else 0.0)
    if args.t_lo is not None and args.t_hi is not None:
        window = (args.t_lo, args.t_hi)
    else:
        window = default_tail_window(args.t0 if args.t0 is not None else tt[-1] / 50.0,
                                     tt[-1])
    fit = fit_tail_exponent(tt, V, v_inf, window, expected=args.expected)
    rev = detect_reversal(tt, V, v_inf, noise_floor=args.noise_floor)
    out = Path(args.output or "fit.csv")
    write_csv(out, ["slope", "r2", "expected", "t_cross", "n_crossings"],
              [(fit.slope, fit.r_squared, fit.expected, rev.t_cross, rev.n_crossings)])
    print(f"fit: slope={fit.slope:.4f} r2={fit.r_squared:.6f} "
          f"crossings={rev.n_crossings} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinrev",
        description="Body-in-gas dynamics: criteria, deterministic solver, "
                    "Monte Carlo oracle")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker count for parallel work")
        return p

    p = add("validate-kernel")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--gamma", type=float, default=0.1)

    p = add("equilibrium")
    p.add_argument("--mode", choices=["irreversal", "reversal"], default="irreversal")

    p = add("criterion")
    p.add_argument("--v-inf", type=float, default=0.0)
    p.add_argument("--side", choices=["left", "right"], default="right")
    p.add_argument("--tol", type=float, default=1e-9)

    p = add("sweep")
    p.add_argument("--side", choices=["left", "right"], default="right")
    p.add_argument("--tol", type=float, default=1e-9)

    p = add("solve")
    p.add_argument("--mode", choices=["auto", "irreversal", "reversal"], default="auto")
    p.add_argument("--t-max", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--fp-tol", type=float)

    p = add("mc")
    p.add_argument("--particles", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", type=float)
    p.add_argument("--static-w", type=float)

    p = add("compare")
    p.add_argument("det_csv")
    p.add_argument("mc_csv")
    p.add_argument("--v-inf", type=float)

    p = sub.add_parser("fit")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("trajectory_csv")
    p.add_argument("--v-inf", type=float)
    p.add_argument("--t-lo", type=float)
    p.add_argument("--t-hi", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--expected", type=float)
    p.add_argument("--noise-floor", type=float, default=0.0)
    p.add_argument("--output")
    return parser


_HANDLERS = {
    "validate-kernel": _cmd_validate_kernel,
    "equilibrium": _cmd_equilibrium,
    "criterion": _cmd_criterion,
    "sweep": _cmd_sweep,
    "solve": _cmd_solve,
    "mc": _cmd_mc,
    "compare": _cmd_compare,
}


def dispatch(args) -> int:
    if args.command == "fit":
        return _cmd_fit(None, args)
    cfg = parse_config(args.config)
    return _HANDLERS[args.command](cfg, args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
