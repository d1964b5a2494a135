"""Event-driven Monte Carlo oracle for the body-gas dynamics.

Simulates weighted particles in a finite axial box around the moving body and
reflects them diffusely off its faces.  The one modeling decision that matters
is the emission law: per-particle simulation must conserve particle flux, so
outgoing relative speeds are drawn from the flux-normalized density
``q(v | u) = v k(v, u) / |u|`` -- exactly a probability density because the
kernel conserves mass.  Everything else is bookkeeping: exact in-substep
crossing times under a frozen body velocity, impulses applied at substep ends,
free outflow plus equilibrium-flux injection at the box ends.

Replicas run independent xoshiro256++ streams derived from the master seed
(stream id = replica index), so results are bit-identical for any worker
count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _mc_engine
from .equilibrium import BodyConfig
from .kernels import KernelSpec, a0_array
from .quadrature import integrate_half_line


@dataclass
class MCConfig:
    """Monte Carlo run parameters.

    ``box_half_length`` of None auto-sizes the axial box to the influence
    horizon (fastest retained particle times t_max); the transverse extent is
    auto-sized to radius + 6 t_max.  ``density_norm`` multiplies the continuum
    gas density (the deterministic modules correspond to 1).
    """

    n_particles: int = 1_000_000
    box_half_length: float | None = None
    seed: int = 20240901
    dt_sub: float = 1e-3
    t_max: float = 10.0
    density_norm: float = 1.0
    replicas: int = 16
    record_dt: float | None = None
    body_half_length: float = 0.5
    inject: bool = True
    absorb_after_first_hit: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.t_max <= 0 or self.dt_sub <= 0:
            raise ValueError("t_max and dt_sub must be positive")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    _JSON_KEYS = ("n_particles", "box_half_length", "seed", "dt_sub", "t_max",
                  "density_norm", "replicas", "record_dt", "body_half_length",
                  "inject", "absorb_after_first_hit")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self._JSON_KEYS}

    @classmethod
    def from_json(cls, obj: dict) -> "MCConfig":
        unknown = set(obj) - set(cls._JSON_KEYS)
        if unknown:
            raise ValueError(f"unknown mc key {sorted(unknown)[0]!r}")
        return cls(**obj)


@dataclass
class MCState:
    """Particle ensemble plus body state for a single replica."""

    x: np.ndarray
    u: np.ndarray
    x_perp: np.ndarray
    u_perp: np.ndarray
    alive: np.ndarray
    free_list: np.ndarray
    free_top: np.ndarray
    rng: np.ndarray
    body_x: float
    body_v: float
    t: float
    weight: float
    ledger: float = 0.0
    n_collisions: int = 0
    escapes: int = 0
    unsafe_escapes: int = 0
    dropped_injections: int = 0


@dataclass
class MCResult:
    times: np.ndarray
    v_mean: np.ndarray
    v_se: np.ndarray
    v_replicas: np.ndarray          # (replicas, n_times)
    collisions_cum: np.ndarray      # mean cumulative collision count
    ledgers: np.ndarray             # per-replica summed collision impulse
    t_end: float
    weight: float
    escapes: int
    unsafe_escapes: int
    dropped_injections: int
    ledger_residual: float          # max |V - V0 - E t - sum(impulses)| over replicas


# ---------------------------------------------------------------------------
# sampling tables and derived geometry
# ---------------------------------------------------------------------------

def _velocity_tables(spec: KernelSpec, n_grid: int = 8193,
                     tail_mass: float = 1e-10) -> tuple[np.ndarray, np.ndarray, float]:
    """Tabulated inverse CDF of the normalized initial density a0."""
    # expand the grid until the tail mass is negligible
    u_hi = 4.0
    total = integrate_half_line(lambda z: float(a0_array(spec, z)), abs_tol=1e-12)
    while integrate_half_line(lambda z: float(a0_array(spec, z)), lower=u_hi,
                              abs_tol=1e-13) > tail_mass * total:
        u_hi *= 1.6
    grid = np.linspace(-u_hi, u_hi, n_grid)
    pdf = a0_array(spec, grid)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
    cdf /= cdf[-1]
    return cdf, grid, u_hi


def _flux_tables(spec: KernelSpec, u_hi: float, n_grid: int = 4097,
                 ) -> tuple[np.ndarray, np.ndarray, float]:
    """Inverse CDF of the inward flux density u * a0(u), u > 0, plus the flux."""
    grid = np.linspace(0.0, u_hi, n_grid)
    pdf = grid * a0_array(spec, grid)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
    flux = cdf[-1]
    cdf = cdf / flux
    return cdf, grid, float(flux)


def _geometry(spec: KernelSpec, body: BodyConfig, mc: MCConfig, v_inf: float,
              u_hi: float, clamp_w: float | None = None) -> dict:
    dim = body.dim
    bl = mc.body_half_length
    L = mc.box_half_length
    if L is None:
        L = bl + u_hi * mc.t_max * 1.05 + 1.0
    r_perp = body.radius + 6.0 * mc.t_max if dim > 1 else 0.0
    a_perp = (2.0 * r_perp) ** (dim - 1)
    body_vol = 2.0 * bl * body.face_area
    vol_free = 2.0 * L * a_perp - body_vol
    total_density = integrate_half_line(lambda z: float(a0_array(spec, z)),
                                        abs_tol=1e-12) * 2.0
    rho = mc.density_norm * total_density
    weight = rho * vol_free / mc.n_particles
    # body-velocity bounds for the could-it-have-re-hit escape diagnostic;
    # a clamped body moves at exactly clamp_w
    v_lo = v_inf - 2.0 * body.gamma
    v_hi = v_inf + 2.0 * body.gamma + abs(body.E) * mc.t_max
    if clamp_w is not None:
        v_lo = min(v_lo, clamp_w)
        v_hi = max(v_hi, clamp_w)
    return {"L": L, "r_perp": r_perp, "a_perp": a_perp, "weight": weight,
            "v_lo_bound": v_lo, "v_hi_bound": v_hi}


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def reflect(spec: KernelSpec, v_body: float, u_in: float, u01: float) -> float:
    """Outgoing particle velocity for one diffuse face reflection.

    The incoming relative velocity picks the face; the outgoing relative
    speed is drawn (via the supplied uniform) from the flux-normalized
    emission density and pointed away from the face.
    """
    rel = u_in - v_body
    if rel == 0.0:
        raise ValueError("incoming relative velocity must be nonzero")
    if not (0.0 <= u01 < 1.0):
        raise ValueError("u01 must lie in [0, 1)")
    v_out = _mc_engine.emit_speed(spec.family_code, spec.params(), rel, u01)
    # rel > 0 means the particle hit the left face and leaves to the left
    return v_body - v_out if rel > 0 else v_body + v_out


def sample_initial(spec: KernelSpec, body: BodyConfig, mc: MCConfig,
                   replica: int = 0, v_inf: float = 0.0) -> MCState:
    """Seeded initial ensemble for one replica."""
    if spec.dim != body.dim:
        raise ValueError(f"kernel dim {spec.dim} != body dim {body.dim}")
    cdf_u, grid_u, u_hi = _velocity_tables(spec)
    geo = _geometry(spec, body, mc, v_inf, u_hi)
    capacity = mc.n_particles + max(1000, mc.n_particles // 8)
    dim = body.dim
    # zero-filled (not empty) so the whole state is reproducible bit for bit,
    # including never-used free slots
    x = np.zeros(capacity)
    u = np.zeros(capacity)
    xp = np.zeros((capacity, max(dim - 1, 1)))
    up = np.zeros((capacity, max(dim - 1, 1)))
    alive = np.zeros(capacity, np.uint8)
    rng = _mc_engine.seed_stream(np.uint64(mc.seed), np.uint64(replica))
    with np.errstate(over="ignore"):
        _mc_engine.init_particles(rng, mc.n_particles, dim, geo["L"], geo["r_perp"],
                                  mc.body_half_length, body.radius,
                                  cdf_u, grid_u, x, u, xp, up, alive)
    free = np.zeros(capacity, np.int64)
    free[:capacity - mc.n_particles] = np.arange(mc.n_particles, capacity)[::-1]
    return MCState(x=x, u=u, x_perp=xp, u_perp=up, alive=alive,
                   free_list=free, free_top=np.array([capacity - mc.n_particles]),
                   rng=rng, body_x=0.0, body_v=body.initial_velocity(v_inf),
                   t=0.0, weight=geo["weight"])


def advance(state: MCState, spec: KernelSpec, body: BodyConfig, mc: MCConfig,
            until: float, v_inf: float = 0.0, clamp_w: float | None = None) -> MCState:
    """Advance a replica state in place up to time ``until``."""
    if until <= state.t:
        raise ValueError("until must exceed the current time")
    cdf_u, grid_u, u_hi = _velocity_tables(spec)
    geo = _geometry(spec, body, mc, v_inf, u_hi, clamp_w)
    cdf_f, grid_f, flux = _flux_tables(spec, u_hi)
    inj_rate = mc.density_norm * flux * geo["a_perp"] / geo["weight"] if mc.inject else 0.0
    n_sub = int(round((until - state.t) / mc.dt_sub))
    n_sub = max(n_sub, 1)
    with np.errstate(over="ignore"):
        out = _mc_engine.advance_chunk(
            state.rng, body.dim, state.x, state.u, state.x_perp, state.u_perp,
            state.alive, state.free_list, state.free_top,
            state.body_x, state.body_v, state.t,
            n_sub, mc.dt_sub, geo["L"], geo["r_perp"], mc.body_half_length,
            body.radius, body.E, state.weight, spec.family_code, spec.params(),
            1 if clamp_w is not None else 0,
            clamp_w if clamp_w is not None else 0.0,
            1 if mc.absorb_after_first_hit else 0,
            inj_rate, cdf_f, grid_f,
            geo["v_lo_bound"], geo["v_hi_bound"], mc.t_max)
    state.body_x, state.body_v, state.t = out[0], out[1], out[2]
    state.ledger += out[3]
    state.n_collisions += out[4]
    state.escapes += out[5]
    state.unsafe_escapes += out[6]
    state.dropped_injections += out[7]
    return state


def _run_replica(args) -> dict:
    (spec_json, body_json, mc_json, replica, v_inf, clamp_w) = args
    spec = KernelSpec.from_json(spec_json)
    body = BodyConfig.from_json(body_json)
    mc = MCConfig.from_json(mc_json)
    record_dt = mc.record_dt if mc.record_dt is not None else 50 * mc.dt_sub
    record_every = max(1, int(round(record_dt / mc.dt_sub)))
    n_sub_total = int(round(mc.t_max / mc.dt_sub))
    n_chunks = (n_sub_total + record_every - 1) // record_every
    state = sample_initial(spec, body, mc, replica=replica, v_inf=v_inf)
    cdf_u, grid_u, u_hi = _velocity_tables(spec)
    geo = _geometry(spec, body, mc, v_inf, u_hi, clamp_w)
    cdf_f, grid_f, flux = _flux_tables(spec, u_hi)
    inj_rate = mc.density_norm * flux * geo["a_perp"] / geo["weight"] if mc.inject else 0.0
    times = np.empty(n_chunks + 1)
    v_rec = np.empty(n_chunks + 1)
    coll_rec = np.empty(n_chunks + 1)
    times[0] = 0.0
    v_rec[0] = clamp_w if clamp_w is not None else state.body_v
    coll_rec[0] = 0.0
    done = 0
    with np.errstate(over="ignore"):
        for chunk in range(n_chunks):
            n_sub = min(record_every, n_sub_total - done)
            out = _mc_engine.advance_chunk(
                state.rng, body.dim, state.x, state.u, state.x_perp, state.u_perp,
                state.alive, state.free_list, state.free_top,
                state.body_x, state.body_v, state.t,
                n_sub, mc.dt_sub, geo["L"], geo["r_perp"], mc.body_half_length,
                body.radius, body.E, state.weight, spec.family_code, spec.params(),
                1 if clamp_w is not None else 0,
                clamp_w if clamp_w is not None else 0.0,
                1 if mc.absorb_after_first_hit else 0,
                inj_rate, cdf_f, grid_f,
                geo["v_lo_bound"], geo["v_hi_bound"], mc.t_max)
            state.body_x, state.body_v, state.t = out[0], out[1], out[2]
            state.ledger += out[3]
            state.n_collisions += out[4]
            state.escapes += out[5]
            state.unsafe_escapes += out[6]
            state.dropped_injections += out[7]
            done += n_sub
            times[chunk + 1] = state.t
            v_rec[chunk + 1] = state.body_v if clamp_w is None else clamp_w
            coll_rec[chunk + 1] = state.n_collisions
    v0 = body.initial_velocity(v_inf) if clamp_w is None else clamp_w
    ledger_residual = abs((state.body_v - v0) - body.E * state.t - state.ledger) \
        if clamp_w is None else 0.0
    return {"times": times, "v": v_rec, "coll": coll_rec,
            "ledger": state.ledger, "ledger_residual": ledger_residual,
            "escapes": state.escapes, "unsafe": state.unsafe_escapes,
            "dropped": state.dropped_injections, "weight": state.weight,
            "t_end": state.t}


def run(spec: KernelSpec, body: BodyConfig, mc: MCConfig, v_inf: float = 0.0,
        clamp_w: float | None = None, jobs: int = 1) -> MCResult:
    """Run ``mc.replicas`` independent replicas and aggregate mean/SE bands.

    Replica streams derive from the master seed by stream id = replica index,
    so the output is deterministic for any ``jobs``.
    """
    if spec.dim != body.dim:
        raise ValueError(f"kernel dim {spec.dim} != body dim {body.dim}")
    tasks = [(spec.to_json(), body.to_json(), mc.to_json(), rep, v_inf, clamp_w)
             for rep in range(mc.replicas)]
    if jobs <= 1:
        results = [_run_replica(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_replica, tasks))
    times = results[0]["times"]
    v_reps = np.stack([r["v"] for r in results])
    coll = np.stack([r["coll"] for r in results]).mean(axis=0)
    v_mean = v_reps.mean(axis=0)
    if mc.replicas > 1:
        v_se = v_reps.std(axis=0, ddof=1) / math.sqrt(mc.replicas)
    else:
        v_se = np.zeros_like(v_mean)
    return MCResult(times=times, v_mean=v_mean, v_se=v_se, v_replicas=v_reps,
                    collisions_cum=coll,
                    ledgers=np.array([r["ledger"] for r in results]),
                    t_end=results[0]["t_end"], weight=results[0]["weight"],
                    escapes=sum(r["escapes"] for r in results),
                    unsafe_escapes=sum(r["unsafe"] for r in results),
                    dropped_injections=sum(r["dropped"] for r in results),
                    ledger_residual=max(r["ledger_residual"] for r in results))


def static_force_estimate(spec: KernelSpec, body: BodyConfig, mc: MCConfig,
                          w: float, jobs: int = 1) -> dict:
    """Mean force on a velocity-clamped body, with replica-based SE.

    A clamped body never creates recollisions (its window averages are
    degenerate), so this estimates the single-collision force directly.
    """
    result = run(spec, body, mc, v_inf=0.0, clamp_w=w, jobs=jobs)
    forces = -result.ledgers / result.t_end
    se = forces.std(ddof=1) / math.sqrt(len(forces)) if len(forces) > 1 else 0.0
    return {"force_mean": float(forces.mean()), "force_se": float(se),
            "forces": forces, "n_collisions": result.collisions_cum[-1],
            "weight": result.weight}


def mc_reversal_verdict(result: MCResult, v_inf: float, t_lo: float,
                        n_windows: int = 5, z_threshold: float = 3.0) -> dict:
    """Windowed significance test for a velocity reversal in MC output.

    Late time is split into windows; within each, replica window-means give a
    mean and standard error.  A reversal is declared when any window mean is
    significantly negative.  Per-node crossings are useless at realistic
    noise levels, so this aggregates before testing.
    """
    times = result.times
    mask = times >= t_lo
    if mask.sum() < n_windows:
        raise ValueError("too few recorded nodes past t_lo")
    idx = np.nonzero(mask)[0]
    chunks = np.array_split(idx, n_windows)
    rows = []
    reversal = False
    for chunk in chunks:
        win_means = result.v_replicas[:, chunk].mean(axis=1) - v_inf
        m = float(win_means.mean())
        se = float(win_means.std(ddof=1) / math.sqrt(len(win_means))) \
            if len(win_means) > 1 else 0.0
        z = m / se if se > 0 else math.inf * np.sign(m) if m != 0 else 0.0
        rows.append({"t_start": float(times[chunk[0]]), "t_end": float(times[chunk[-1]]),
                     "mean": m, "se": se, "z": float(z)})
        if se > 0 and z < -z_threshold:
            reversal = True
    return {"verdict": "Reversal" if reversal else "Irreversal", "windows": rows}


def compare(result: MCResult, det_times, det_values, v_inf: float,
            t_lo: float | None = None) -> dict:
    """Z-score comparison of a deterministic trajectory against MC bands.

    The deterministic trajectory is resampled onto the MC recording grid;
    ``class_agreement`` compares the windowed MC reversal verdict with the
    deterministic sign scan.
    """
    from .analysis import detect_reversal

    det_times = np.asarray(det_times, dtype=float)
    det_values = np.asarray(det_values, dtype=float)
    det_on_mc = np.interp(result.times, det_times, det_values)
    se = result.v_se.copy()
    ok = se > 0
    z = np.zeros_like(se)
    z[ok] = (det_on_mc[ok] - result.v_mean[ok]) / se[ok]
    exact = (~ok) & (np.abs(det_on_mc - result.v_mean) < 1e-12)
    z[(~ok) & ~exact] = np.inf
    within3 = float(np.mean(np.abs(z) <= 3.0))
    det_report = detect_reversal(det_times, det_values, v_inf)
    det_verdict = "Reversal" if det_report.crossed else "Irreversal"
    if t_lo is None:
        t_lo = 0.25 * result.times[-1]
    mc_verdict = mc_reversal_verdict(result, v_inf, t_lo)
    return {"max_abs_z": float(np.max(np.abs(z))), "frac_within_3sigma": within3,
            "det_verdict": det_verdict, "mc_verdict": mc_verdict["verdict"],
            "class_agreement": det_verdict == mc_verdict["verdict"],
            "windows": mc_verdict["windows"]}
