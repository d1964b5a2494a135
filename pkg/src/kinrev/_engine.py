"""Jitted kernels for the deterministic recollision solver.

Everything here operates on the shifted velocity ``Y(t) = W(t) - v_inf`` on a
uniform grid, with the trajectory's prefix integral ``I`` defining window
averages as chord slopes ``(I(t) - I(s)) / (t - s)``.  Under the trapezoid
prefix model the window average is monotone on each grid cell, so precollision
roots are solved exactly per cell and the infimum over window starts is
attained at grid nodes.

The per-time-node recollision data (band edges, first-precollision times,
boundary-density corrections) are tabulated row by row; the depth-N truncated
boundary recursion is realised as N sweeps over the rows, each consuming the
previous sweep's correction tables.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit
from .kernels import ell_scalar, k_scalar, a0_scalar

_SQRT_PI = math.sqrt(math.pi)


@njit(cache=True)
def prefix_trapezoid(y: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    for i in range(1, y.size):
        out[i] = out[i - 1] + 0.5 * dt * (y[i - 1] + y[i])
    return out


@njit(cache=True, inline="always")
def _interp_uniform(arr: np.ndarray, dt: float, t: float) -> float:
    n = arr.size - 1
    x = t / dt
    if x <= 0.0:
        return arr[0]
    if x >= n:
        return arr[n]
    j = int(x)
    frac = x - j
    return arr[j] * (1.0 - frac) + arr[j + 1] * frac


@njit(cache=True, inline="always")
def window_mean(I: np.ndarray, Y: np.ndarray, dt: float, s: float, t: float) -> float:
    """Chord slope (I(t) - I(s))/(t - s); the s -> t limit returns Y(t)."""
    if t - s <= 1e-14 * max(1.0, abs(t)):
        return _interp_uniform(Y, dt, t)
    Is = _interp_uniform(I, dt, s)
    It = _interp_uniform(I, dt, t)
    return (It - Is) / (t - s)


@njit(cache=True, inline="always")
def transverse_weight_scalar(dim: int, radius: float, gap: float) -> float:
    """Transverse mass within the return disc of a precollision gap."""
    if dim == 1:
        return 1.0
    if gap <= 0.0:
        return 1.0
    R = 2.0 * radius / gap
    if dim == 2:
        return math.erf(R / math.sqrt(2.0))
    return 1.0 - math.exp(-0.5 * R * R)


# ---------------------------------------------------------------------------
# stage A: bands and first-precollision times for every grid node
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _cell_root(I, Y, dt, i, j, u):
    """Exact root of the chord equation within cell [s_j, s_{j+1}].

    Within a cell the prefix integral is linear, so the window average is a
    monotone rational function of s and the root solves a linear equation.
    """
    ti = i * dt
    sj = j * dt
    mcell = 0.5 * (Y[j] + Y[j + 1])
    denom = mcell - u
    if abs(denom) < 1e-300:
        s_root = sj + dt
    else:
        s_root = (I[i] - I[j] + mcell * sj - u * ti) / denom
    if s_root < sj:
        s_root = sj
    elif s_root > sj + dt:
        s_root = sj + dt
    if s_root > ti:
        s_root = ti
    return s_root


@njit(cache=True)
def stage_a(Y, I, dt, xi_lo, xi_hi, width_eps):
    """Tabulate band edges and first-precollision times per grid row.

    ``xi_lo`` are normalized node positions graded toward 0 (used on the left
    band, cusp at the lower edge); ``xi_hi`` the mirrored set graded toward 1
    (right band, cusp at the upper edge).  Scanning window starts from the
    newest cell backward, the set of chord values covered so far is a single
    interval, so a level's first bracketing cell (the largest root, i.e. the
    first precollision) is found the moment coverage expands past it.
    ``unresolved`` counts levels no cell bracketed (stays 0 in practice).
    """
    n = Y.size - 1
    m = xi_lo.size
    mean = np.empty(n + 1)
    infc = np.empty(n + 1)
    tau_l = np.zeros((n + 1, m))
    tau_r = np.zeros((n + 1, m))
    active_l = np.zeros(n + 1, np.uint8)
    active_r = np.zeros(n + 1, np.uint8)
    mean[0] = Y[0]
    infc[0] = Y[0]
    phi = np.empty(n + 1)
    levels = np.empty(2 * m)
    level_slot = np.empty(2 * m, np.int64)
    roots = np.empty(2 * m)
    unresolved = 0
    for i in range(1, n + 1):
        ti = i * dt
        minphi = np.inf
        for j in range(i):
            p = (I[i] - I[j]) / (ti - j * dt)
            phi[j] = p
            if p < minphi:
                minphi = p
        yi = Y[i]
        phi[i] = yi
        mean[i] = I[i] / ti
        infc[i] = minphi if minphi < yi else yi
        w_l = mean[i] - yi
        w_r = yi - minphi
        al = w_l > width_eps
        ar = w_r > width_eps
        active_l[i] = 1 if al else 0
        active_r[i] = 1 if ar else 0
        if not (al or ar):
            continue
        nlev = 0
        if ar:
            for k in range(m):
                levels[nlev] = minphi + xi_hi[k] * w_r
                level_slot[nlev] = m + k  # right-face slot
                nlev += 1
        if al:
            for k in range(m):
                levels[nlev] = yi + xi_lo[k] * w_l
                level_slot[nlev] = k  # left-face slot
                nlev += 1
        for q in range(nlev):
            roots[q] = -1.0
        remaining = nlev
        vmin = yi
        vmax = yi
        for j in range(i - 1, -1, -1):
            p = phi[j]
            if p > vmax:
                kl = np.searchsorted(levels[:nlev], vmax, side="right")
                kr = np.searchsorted(levels[:nlev], p, side="right")
                for idx in range(kl, kr):
                    roots[idx] = _cell_root(I, Y, dt, i, j, levels[idx])
                remaining -= kr - kl
                vmax = p
            elif p < vmin:
                kl = np.searchsorted(levels[:nlev], p, side="left")
                kr = np.searchsorted(levels[:nlev], vmin, side="left")
                for idx in range(kl, kr):
                    roots[idx] = _cell_root(I, Y, dt, i, j, levels[idx])
                remaining -= kr - kl
                vmin = p
            if remaining == 0:
                break
        for q in range(nlev):
            slot = level_slot[q]
            root_q = roots[q]
            if root_q < 0.0:
                unresolved += 1
                root_q = 0.0
            if slot < m:
                tau_l[i, slot] = root_q
            else:
                tau_r[i, slot - m] = root_q
    return mean, infc, tau_l, tau_r, active_l, active_r, unresolved


# ---------------------------------------------------------------------------
# free-streaming boundary response G
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _gaussian_response(alpha, beta, c1, c2, v, w):
    # c2 exp(-beta v^2) * c1 * int_0^inf z exp(-alpha (z + w)^2) dz
    jw = math.exp(-alpha * w * w) / (2.0 * alpha) \
        - w * (_SQRT_PI / (2.0 * math.sqrt(alpha))) * math.erfc(math.sqrt(alpha) * w)
    return c2 * math.exp(-beta * v * v) * c1 * jw


@njit(cache=True, inline="always")
def _table_lookup(table, x0, dx, y0, dy, x, y):
    nx = table.shape[0] - 1
    ny = table.shape[1] - 1
    fx = (x - x0) / dx
    fy = (y - y0) / dy
    if fx < 0.0:
        fx = 0.0
    elif fx > nx:
        fx = float(nx)
    if fy < 0.0:
        fy = 0.0
    elif fy > ny:
        fy = float(ny)
    ix = int(fx)
    iy = int(fy)
    if ix >= nx:
        ix = nx - 1
    if iy >= ny:
        iy = ny - 1
    ax = fx - ix
    ay = fy - iy
    return (table[ix, iy] * (1 - ax) * (1 - ay) + table[ix + 1, iy] * ax * (1 - ay)
            + table[ix, iy + 1] * (1 - ax) * ay + table[ix + 1, iy + 1] * ax * ay)


@njit(cache=True, inline="always")
def g_response(gmode, par, g_left, g_right, gv0, gdv, gw0, gdw,
               left_face, v, w):
    """Free-streaming response: integral of k(v, z) a0(w +/- z) over z >= 0."""
    if gmode == 0:
        if left_face:
            return _gaussian_response(par[0], par[1], par[2], par[3], v, w)
        return _gaussian_response(par[0], par[1], par[2], par[3], v, -w)
    av = abs(v)  # k even in v; tables store v >= 0
    if left_face:
        return _table_lookup(g_left, gv0, gdv, gw0, gdw, av, w)
    return _table_lookup(g_right, gv0, gdv, gw0, gdw, av, w)


# ---------------------------------------------------------------------------
# depth sweeps
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _cheb_interp(vals, nodes, bary_w, x):
    num = 0.0
    den = 0.0
    for j in range(nodes.size):
        d = x - nodes[j]
        if abs(d) < 1e-15:
            return vals[j]
        t = bary_w[j] / d
        num += t * vals[j]
        den += t
    return num / den


@njit(cache=True, inline="always")
def _corr_value(corr, lo, width, active, cheb_nodes, bary_w, dt, n, tau, u):
    """Interpolate the tabulated boundary correction at off-grid (tau, u)."""
    x = tau / dt
    i0 = int(x)
    if i0 >= n:
        i0 = n - 1
    th = x - i0
    out = 0.0
    for step in range(2):
        i = i0 + step
        wgt = (1.0 - th) if step == 0 else th
        if wgt == 0.0 or active[i] == 0:
            continue
        wid = width[i]
        if wid <= 0.0:
            continue
        z = (u - lo[i]) / wid
        if z < 0.0:
            z = 0.0
        elif z > 1.0:
            z = 1.0
        out += wgt * _cheb_interp(corr[i], cheb_nodes, bary_w, z)
    return out


@njit(cache=True)
def depth_sweep(Y, dt, v_inf, code, par,
                mean, infc, tau_l, tau_r, active_l, active_r,
                xi_lo, xi_hi,
                gmode, g_left, g_right, gv0, gdv, gw0, gdw,
                use_corr, corr_l, corr_r, cheb_nodes, bary_w,
                d_l, d_r):
    """One application of the boundary recursion: fill D = a_+(tau; u) - a0(u).

    ``corr_l``/``corr_r`` hold the previous depth's band-correction tables
    (ignored when ``use_corr`` is 0, which yields the free-streaming depth-1
    densities).
    """
    n = Y.size - 1
    m = xi_lo.size
    lo_l = np.empty(n + 1)
    wid_l = np.empty(n + 1)
    lo_r = np.empty(n + 1)
    wid_r = np.empty(n + 1)
    for i in range(n + 1):
        lo_l[i] = Y[i]
        wid_l[i] = mean[i] - Y[i]
        lo_r[i] = infc[i]
        wid_r[i] = Y[i] - infc[i]
    for i in range(1, n + 1):
        if active_l[i] == 1:
            w_band = wid_l[i]
            for k in range(m):
                u = lo_l[i] + xi_lo[k] * w_band
                tau = tau_l[i, k]
                ytau = _interp_uniform(Y, dt, tau)
                v = u - ytau
                g = g_response(gmode, par, g_left, g_right, gv0, gdv, gw0, gdw,
                               True, v, v_inf + ytau)
                corr = 0.0
                if use_corr == 1:
                    corr = _corr_value(corr_l, lo_l, wid_l, active_l,
                                       cheb_nodes, bary_w, dt, n, tau, u)
                d_l[i, k] = g + corr - a0_scalar(code, par, v_inf + u)
        if active_r[i] == 1:
            w_band = wid_r[i]
            for k in range(m):
                u = lo_r[i] + xi_hi[k] * w_band
                tau = tau_r[i, k]
                ytau = _interp_uniform(Y, dt, tau)
                v = u - ytau
                g = g_response(gmode, par, g_left, g_right, gv0, gdv, gw0, gdw,
                               False, v, v_inf + ytau)
                corr = 0.0
                if use_corr == 1:
                    corr = _corr_value(corr_r, lo_r, wid_r, active_r,
                                       cheb_nodes, bary_w, dt, n, tau, u)
                d_r[i, k] = g + corr - a0_scalar(code, par, v_inf + u)


@njit(cache=True)
def correction_pass(Y, dt, code, par, dim, radius,
                    mean, infc, tau_l, tau_r, active_l, active_r,
                    xi_lo, xi_hi, wq_lo, wq_hi, cheb_nodes,
                    d_l, d_r, corr_l, corr_r):
    """Band-correction tables: for each row and Chebyshev outgoing node,
    integrate k * transverse_weight * D over the row's own band."""
    n = Y.size - 1
    m = xi_lo.size
    nc = cheb_nodes.size
    for i in range(1, n + 1):
        ti = i * dt
        yi = Y[i]
        if active_l[i] == 1:
            w_band = mean[i] - yi
            for c in range(nc):
                uc = yi + cheb_nodes[c] * w_band
                vc = uc - yi
                acc = 0.0
                for k in range(m):
                    uk = yi + xi_lo[k] * w_band
                    tw = transverse_weight_scalar(dim, radius, ti - tau_l[i, k])
                    acc += wq_lo[k] * k_scalar(code, par, vc, uk - yi) * tw * d_l[i, k]
                corr_l[i, c] = acc * w_band
        else:
            for c in range(nc):
                corr_l[i, c] = 0.0
        if active_r[i] == 1:
            lo = infc[i]
            w_band = yi - lo
            for c in range(nc):
                uc = lo + cheb_nodes[c] * w_band
                vc = uc - yi
                acc = 0.0
                for k in range(m):
                    uk = lo + xi_hi[k] * w_band
                    tw = transverse_weight_scalar(dim, radius, ti - tau_r[i, k])
                    acc += wq_hi[k] * k_scalar(code, par, vc, uk - yi) * tw * d_r[i, k]
                corr_r[i, c] = acc * w_band
        else:
            for c in range(nc):
                corr_r[i, c] = 0.0


@njit(cache=True)
def assemble_residual(Y, dt, code, par, dim, radius, face_area,
                      mean, infc, tau_l, tau_r, active_l, active_r,
                      xi_lo, xi_hi, wq_lo, wq_hi, d_l, d_r):
    """Residual force rows: r_L (enriched left-face recollisions, paper
    orientation: negative of the band integral) and the mirrored r_R."""
    n = Y.size - 1
    m = xi_lo.size
    r_l = np.zeros(n + 1)
    r_r = np.zeros(n + 1)
    for i in range(1, n + 1):
        ti = i * dt
        yi = Y[i]
        if active_l[i] == 1:
            w_band = mean[i] - yi
            acc = 0.0
            for k in range(m):
                uk = yi + xi_lo[k] * w_band
                tw = transverse_weight_scalar(dim, radius, ti - tau_l[i, k])
                acc += wq_lo[k] * ell_scalar(code, par, uk - yi) * tw * d_l[i, k]
            r_l[i] = -face_area * acc * w_band
        if active_r[i] == 1:
            lo = infc[i]
            w_band = yi - lo
            acc = 0.0
            for k in range(m):
                uk = lo + xi_hi[k] * w_band
                tw = transverse_weight_scalar(dim, radius, ti - tau_r[i, k])
                acc += wq_hi[k] * ell_scalar(code, par, uk - yi) * tw * d_r[i, k]
            r_r[i] = face_area * acc * w_band
    return r_l, r_r


# ---------------------------------------------------------------------------
# trajectory integrators
# ---------------------------------------------------------------------------

@njit(cache=True)
def integrate_factor(Q, R, gamma, dt, substeps):
    """Exponential-integrator solution of y' = -Q(t) y - R(t), y(0) = gamma.

    Exact for piecewise-linear Q-integral and trapezoid source; this is the
    integrating-factor form of the velocity update.
    """
    n = Q.size - 1
    y = np.empty(n + 1)
    y[0] = gamma
    for i in range(n):
        h = dt / substeps
        yi = y[i]
        for s in range(substeps):
            f0 = s / substeps
            f1 = (s + 1) / substeps
            q0 = Q[i] * (1 - f0) + Q[i + 1] * f0
            q1 = Q[i] * (1 - f1) + Q[i + 1] * f1
            r0 = R[i] * (1 - f0) + R[i + 1] * f0
            r1 = R[i] * (1 - f1) + R[i + 1] * f1
            ef = math.exp(-0.5 * h * (q0 + q1))
            yi = ef * yi - 0.5 * h * (r0 * ef + r1)
        y[i + 1] = yi
    return y


@njit(cache=True)
def integrate_heun(Q, R, gamma, dt, substeps):
    """Explicit trapezoid (Heun) stepping of the same velocity update; the
    independent cross-check of the integrating-factor path."""
    n = Q.size - 1
    y = np.empty(n + 1)
    y[0] = gamma
    for i in range(n):
        h = dt / substeps
        yi = y[i]
        for s in range(substeps):
            f0 = s / substeps
            f1 = (s + 1) / substeps
            q0 = Q[i] * (1 - f0) + Q[i + 1] * f0
            q1 = Q[i] * (1 - f1) + Q[i + 1] * f1
            r0 = R[i] * (1 - f0) + R[i + 1] * f0
            r1 = R[i] * (1 - f1) + R[i + 1] * f1
            k1 = -q0 * yi - r0
            ypred = yi + h * k1
            k2 = -q1 * ypred - r1
            yi = yi + 0.5 * h * (k1 + k2)
        y[i + 1] = yi
    return y
