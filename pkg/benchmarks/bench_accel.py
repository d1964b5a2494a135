#!/usr/bin/env python3
"""Benchmark the numba-jitted hot kernels against the pure-Python/numpy
fallback (KINREV_NO_NUMBA=1).

Runs the same two workloads -- a deterministic fixed-point solve and a Monte
Carlo replica -- in both modes in subprocesses and prints a small table.
Results are bit-identical between modes; only wall time differs.

Usage: python benchmarks/bench_accel.py [--steps N] [--particles N]
"""

import argparse
import json
import os
import subprocess
import sys

SNIPPET = """
import json, time, warnings
warnings.simplefilter("ignore")
from kinrev.kernels import KernelSpec
from kinrev.equilibrium import BodyConfig
from kinrev.solver import SolverProblem, SolverConfig, fixed_point_solve
from kinrev.montecarlo import MCConfig, run
import kinrev._accel as accel

steps, particles = {steps}, {particles}
spec = KernelSpec("gaussian_flux", alpha=1.0, beta=0.5, dim=1)
body = BodyConfig(dim=1, E=0.0, gamma=0.05)

cfg = SolverConfig(n_steps=steps, t_max=6.0, depth_n=2, fp_tol=1e-8)
problem = SolverProblem(spec, body, mode="auto", config=cfg)
fixed_point_solve(problem)  # warm-up (jit compile)
t0 = time.time()
res = fixed_point_solve(problem)
t_solve = time.time() - t0

mc = MCConfig(n_particles=particles, t_max=1.0, dt_sub=0.002, replicas=1, seed=11)
run(spec, body, mc, v_inf=0.0)  # warm-up
t0 = time.time()
r = run(spec, body, mc, v_inf=0.0)
t_mc = time.time() - t0

print(json.dumps({{"numba": accel.NUMBA_ENABLED, "solve_s": t_solve,
                   "mc_s": t_mc, "check": float(res.trajectory.values[-1]),
                   "check_mc": float(r.v_mean[-1])}}))
"""


def run_mode(no_numba: bool, steps: int, particles: int) -> dict:
    env = dict(os.environ)
    env["KINREV_NO_NUMBA"] = "1" if no_numba else "0"
    code = SNIPPET.format(steps=steps, particles=particles)
    proc = subprocess.run([sys.executable, "-c", code], env=env,
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(proc.stderr)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=600,
                    help="solver grid steps (fallback cost grows quadratically)")
    ap.add_argument("--particles", type=int, default=20000)
    args = ap.parse_args()
    jit = run_mode(False, args.steps, args.particles)
    fb = run_mode(True, args.steps, args.particles)
    assert jit["check"] == fb["check"], "modes disagree on solver output"
    assert jit["check_mc"] == fb["check_mc"], "modes disagree on MC output"
    print(f"{'workload':<28}{'numba':>10}{'fallback':>12}{'speedup':>10}")
    print(f"{'fixed-point solve':<28}{jit['solve_s']:>9.2f}s{fb['solve_s']:>11.2f}s"
          f"{fb['solve_s'] / jit['solve_s']:>9.1f}x")
    print(f"{'monte carlo replica':<28}{jit['mc_s']:>9.2f}s{fb['mc_s']:>11.2f}s"
          f"{fb['mc_s'] / jit['mc_s']:>9.1f}x")
    print("outputs bit-identical across modes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
