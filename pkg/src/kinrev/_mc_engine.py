"""Jitted particle kernels for the Monte Carlo oracle.

One replica is advanced by one long kernel call per recording interval: the
body velocity is frozen within each substep, particle-face crossings inside a
substep are solved exactly for linear motion, and every crossing samples an
outgoing velocity from the flux-normalized emission law and books the impulse
on the body at the substep end.

Randomness comes from an explicit xoshiro256++ stream per replica (seeded
through splitmix64), so runs are bit-reproducible across platforms and worker
counts.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit

U64 = np.uint64
_DOUBLE_NORM = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _rotl(x, k):
    return U64((x << U64(k)) | (x >> U64(64 - k)))


@njit(cache=True, inline="always")
def _splitmix64(s):
    """One splitmix64 step; s is a length-1 uint64 carrier."""
    s[0] = U64(s[0] + U64(0x9E3779B97F4A7C15))
    z = s[0]
    z = U64((z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9))
    z = U64((z ^ (z >> U64(27))) * U64(0x94D049BB133111EB))
    return U64(z ^ (z >> U64(31)))


@njit(cache=True)
def seed_stream(master: np.uint64, stream: np.uint64) -> np.ndarray:
    """Expand (master seed, stream id) into a xoshiro256++ state."""
    carrier = np.empty(1, np.uint64)
    carrier[0] = U64(master + U64(0x9E3779B97F4A7C15) * (stream + U64(1)))
    state = np.empty(4, np.uint64)
    for i in range(4):
        state[i] = _splitmix64(carrier)
    return state


@njit(cache=True, inline="always")
def _next_u64(s):
    result = U64(_rotl(U64(s[0] + s[3]), 23) + s[0])
    t = U64(s[1] << U64(17))
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def uniform01(s) -> float:
    """Uniform double in [0, 1) with 53 random bits."""
    return float(_next_u64(s) >> U64(11)) * _DOUBLE_NORM


@njit(cache=True, inline="always")
def standard_normal(s) -> float:
    u1 = uniform01(s)
    while u1 <= 1e-300:
        u1 = uniform01(s)
    u2 = uniform01(s)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, inline="always")
def _poisson(s, lam: float) -> int:
    # Knuth product-of-uniforms; lam stays O(10) per substep here
    limit = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= uniform01(s)
        if p <= limit:
            return k
        k += 1


@njit(cache=True, inline="always")
def _interp_table(u01: float, cdf: np.ndarray, grid: np.ndarray) -> float:
    """Inverse-CDF lookup by binary search plus linear interpolation."""
    lo = 0
    hi = cdf.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cdf[mid] <= u01:
            lo = mid
        else:
            hi = mid
    c0 = cdf[lo]
    c1 = cdf[hi]
    if c1 <= c0:
        return grid[lo]
    w = (u01 - c0) / (c1 - c0)
    return grid[lo] * (1.0 - w) + grid[hi] * w


@njit(cache=True, inline="always")
def emit_speed(code: int, par: np.ndarray, u_rel: float, u01: float) -> float:
    """Outgoing relative speed from the flux-normalized emission density
    q(v | u) = v k(v, u) / |u|; exact inverse CDFs for every built-in."""
    x = -math.log(1.0 - u01) if u01 < 1.0 else 700.0
    if code == 0:  # gaussian_flux: q = 2 beta v exp(-beta v^2)
        return math.sqrt(x / par[1])
    if code == 1 or code == 3:  # width_coupled: Rayleigh with scale |u|/2
        return math.sqrt(abs(u_rel) * x)
    a = abs(u_rel) ** (par[1] - 1.0)  # power_family
    return math.sqrt(x / a)


@njit(cache=True)
def init_particles(rng, n, dim, L, r_perp, body_half, radius,
                   cdf_u, grid_u, x, u, xp, up, alive):
    """Fill particle arrays: uniform positions outside the body, horizontal
    velocities from the tabulated density, transverse from the Gaussian."""
    cap = x.size
    for i in range(cap):
        alive[i] = 0
    for i in range(n):
        while True:
            xi = (2.0 * uniform01(rng) - 1.0) * L
            ok = True
            if dim == 1:
                ok = abs(xi) > body_half
                if ok:
                    for q in range(xp.shape[1]):
                        xp[i, q] = 0.0
            else:
                rr = 0.0
                for q in range(dim - 1):
                    xp[i, q] = (2.0 * uniform01(rng) - 1.0) * r_perp
                    rr += xp[i, q] * xp[i, q]
                if abs(xi) <= body_half and rr <= radius * radius:
                    ok = False
            if ok:
                x[i] = xi
                break
        u[i] = _interp_table(uniform01(rng), cdf_u, grid_u)
        for q in range(dim - 1):
            up[i, q] = standard_normal(rng)
        alive[i] = 1


@njit(cache=True)
def advance_chunk(rng, dim, x, u, xp, up, alive, free_list, state_i,
                  body_x, body_v, t_now,
                  n_sub, dt_sub, L, r_perp, body_half, radius,
                  E, weight, code, par,
                  clamp_flag, clamp_w, absorb_flag,
                  inj_rate, cdf_flux, grid_flux,
                  v_lo_bound, v_hi_bound, t_max):
    """Advance every particle and the body over ``n_sub`` substeps.

    Particles move ballistically in one branch-free bulk pass per substep;
    only a periodically refreshed near-body index list runs the full
    event machinery (face/lateral intersection, reflection, impulses).  The
    refresh horizon is sized so no particle outside the list can reach a face
    before the next refresh.  Returns updated (body_x, body_v, t,
    ledger_increment, collision_count, escapes, unsafe_escapes,
    dropped_injections); ``state_i[0]`` carries the free-list top.
    """
    cap = x.size
    ledger = 0.0
    n_coll = 0
    escapes = 0
    unsafe = 0
    dropped = 0
    free_top = state_i[0]
    h = dt_sub
    # grow-only bound on particle speeds, for the reach horizon
    u_max = 0.0
    for i in range(cap):
        if alive[i] == 1 and abs(u[i]) > u_max:
            u_max = abs(u[i])
    inj_speed_max = grid_flux[grid_flux.size - 1] if grid_flux.size > 0 else 0.0
    near_idx = np.empty(cap, np.int64)
    refresh = 25
    sub_done = 0
    while sub_done < n_sub:
        kk = refresh if n_sub - sub_done > refresh else n_sub - sub_done
        v_now = clamp_w if clamp_flag == 1 else body_v
        horizon = body_half + (u_max + abs(v_now) + 1.0) * (kk * h)
        # small boxes (or fast injected particles) invalidate the horizon
        # argument: fall back to treating every particle as near
        if L - body_half <= 2.0 * horizon + inj_speed_max * kk * h:
            horizon = 2.0 * L
        m_near = 0
        for i in range(cap):
            if alive[i] == 1:
                dxi = x[i] - body_x
                if -horizon <= dxi <= horizon:
                    near_idx[m_near] = i
                    m_near += 1
        for _step in range(kk):
            v_eff = clamp_w if clamp_flag == 1 else body_v
            dvc = 0.0
            # bulk ballistic move, dead slots included (harmless)
            for i in range(cap):
                x[i] += u[i] * h
            if dim > 1:
                for i in range(cap):
                    for q in range(dim - 1):
                        xp[i, q] += up[i, q] * h
            for j in range(m_near):
                i = near_idx[j]
                if alive[i] == 0:
                    continue
                ui = u[i]
                xi_rel = (x[i] - ui * h) - body_x  # substep-start position
                rel = ui - v_eff
                th_face = -1.0
                left_face = False
                if xi_rel <= -body_half:
                    if rel > 0.0:
                        th = (-body_half - xi_rel) / rel
                        if th <= h:
                            th_face = th
                            left_face = True
                elif xi_rel >= body_half:
                    if rel < 0.0:
                        th = (body_half - xi_rel) / rel
                        if th <= h:
                            th_face = th
                s1 = 0.0
                s2 = h
                outside_radially = False
                if dim > 1:
                    a = 0.0
                    b = 0.0
                    c = -radius * radius
                    for q in range(dim - 1):
                        xp0 = xp[i, q] - up[i, q] * h
                        a += up[i, q] * up[i, q]
                        b += 2.0 * xp0 * up[i, q]
                        c += xp0 * xp0
                    outside_radially = c > 0.0
                    if a <= 1e-300:
                        if outside_radially:
                            s1 = h + 1.0
                            s2 = h + 1.0
                    else:
                        disc = b * b - 4.0 * a * c
                        if disc <= 0.0:
                            s1 = h + 1.0
                            s2 = h + 1.0
                        else:
                            root = math.sqrt(disc)
                            s1 = (-b - root) / (2.0 * a)
                            s2 = (-b + root) / (2.0 * a)
                hit_face = False
                hit_lateral = False
                t_event = h + 1.0
                if th_face >= 0.0 and s1 <= th_face <= s2:
                    hit_face = True
                    t_event = th_face
                if dim > 1 and outside_radially and 0.0 < s1 <= h:
                    ax = xi_rel + rel * s1
                    if abs(ax) < body_half and s1 < t_event:
                        hit_face = False
                        hit_lateral = True
                        t_event = s1
                if hit_face:
                    u_in = ui
                    u01 = uniform01(rng)
                    v_out = emit_speed(code, par, u_in - v_eff, u01)
                    u_out = v_eff - v_out if left_face else v_eff + v_out
                    dvc += weight * (u_in - u_out)
                    n_coll += 1
                    if abs(u_out) > u_max:
                        u_max = abs(u_out)
                    for q in range(dim - 1):
                        xp[i, q] += up[i, q] * (t_event - h)  # back to event time
                        up[i, q] = standard_normal(rng)
                    if absorb_flag == 1:
                        alive[i] = 0
                        free_list[free_top] = i
                        free_top += 1
                        continue
                    x_e = (x[i] - u_in * h) + u_in * t_event
                    u[i] = u_out
                    x[i] = x_e + u_out * (h - t_event)
                    for q in range(dim - 1):
                        xp[i, q] += up[i, q] * (h - t_event)
                elif hit_lateral:
                    # diffuse lateral reflection: transverse velocity resampled
                    # outward; zero axial momentum transfer
                    nx0 = 0.0
                    for q in range(dim - 1):
                        xp[i, q] += up[i, q] * (t_event - h)
                    rr = 0.0
                    for q in range(dim - 1):
                        rr += xp[i, q] * xp[i, q]
                    rr = math.sqrt(rr) if rr > 0 else 1.0
                    for q in range(dim - 1):
                        nrm = xp[i, q] / rr
                        g = standard_normal(rng)
                        up[i, q] = g
                        nx0 += g * nrm
                    if nx0 < 0.0:
                        for q in range(dim - 1):
                            up[i, q] -= 2.0 * nx0 * xp[i, q] / rr
                    for q in range(dim - 1):
                        xp[i, q] += up[i, q] * (h - t_event)
                # escapes of near particles through the axial ends
                if alive[i] == 1 and (x[i] > L or x[i] < -L):
                    alive[i] = 0
                    free_list[free_top] = i
                    free_top += 1
                    escapes += 1
                    t_left = t_max - t_now
                    if x[i] > L:
                        if u[i] < v_hi_bound and \
                                body_x + body_half + v_hi_bound * t_left >= L:
                            unsafe += 1
                    else:
                        if u[i] > v_lo_bound and x[i] + u[i] * t_left >= \
                                body_x - body_half + v_lo_bound * t_left:
                            unsafe += 1
            # body update (frozen-velocity substep, impulse applied at the end)
            if clamp_flag == 1:
                body_x += clamp_w * h
                ledger += dvc
            else:
                body_x += body_v * h
                body_v += E * h + dvc
                ledger += dvc
            t_now += h
            # equilibrium injection at the axial ends
            if inj_rate > 0.0:
                for side in range(2):
                    lam = inj_rate * h
                    kn = _poisson(rng, lam)
                    for _k in range(kn):
                        speed = _interp_table(uniform01(rng), cdf_flux, grid_flux)
                        frac = uniform01(rng)
                        if free_top > 0:
                            free_top -= 1
                            idx = free_list[free_top]
                        else:
                            idx = -1
                            dropped += 1
                        if idx >= 0:
                            if speed > u_max:
                                u_max = speed
                            if side == 0:
                                x[idx] = -L + speed * frac * h
                                u[idx] = speed
                            else:
                                x[idx] = L - speed * frac * h
                                u[idx] = -speed
                            for q in range(dim - 1):
                                xp[idx, q] = (2.0 * uniform01(rng) - 1.0) * r_perp
                                up[idx, q] = standard_normal(rng)
                            alive[idx] = 1
        sub_done += kk
        # sweep far escapes once per refresh interval
        for i in range(cap):
            if alive[i] == 1 and (x[i] > L or x[i] < -L):
                alive[i] = 0
                free_list[free_top] = i
                free_top += 1
                escapes += 1
                t_left = t_max - t_now
                if x[i] > L:
                    if u[i] < v_hi_bound and \
                            body_x + body_half + v_hi_bound * t_left >= L:
                        unsafe += 1
                else:
                    if u[i] > v_lo_bound and x[i] + u[i] * t_left >= \
                            body_x - body_half + v_lo_bound * t_left:
                        unsafe += 1
    state_i[0] = free_top
    return body_x, body_v, t_now, ledger, n_coll, escapes, unsafe, dropped
