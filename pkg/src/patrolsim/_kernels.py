"""Numba-compiled inner loops for velocity-obstacle math and ray casting.

These kernels exist purely for speed: the 30-minute collision scenarios step
hundreds of thousands of ticks, which is out of reach for per-candidate
Python loops. Public modules (`frvo`, `localnav`) wrap them behind typed
APIs; nothing here is part of the package surface.

Velocity-obstacle convention used throughout: a cone is stored as the
relative position ``p`` of the neighbor, the combined disc radius ``r``, the
reciprocity apex ``a`` (velocity-space translation), a ``degenerate`` flag
(footprints already overlapping) and the horizon ``tau``. A candidate agent
velocity ``v`` is forbidden iff the relative velocity ``u = 2(v - a)``
brings the footprints within ``r`` of each other at some time in (0, tau]:

    min_{t in (0, tau]} |p - u t|  <  r

which is a clamped 1D quadratic. Degenerate cones forbid the half-plane of
velocities that close the distance further.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

# Slots per obstacle in the candidate buffer: left leg, right leg, arc point.
BOUNDARY_CANDIDATES = 3
# Outward nudge applied to boundary candidates so they land strictly outside.
_NUDGE = 1e-9


@njit(cache=True)
def velocity_infeasible(vx, vy, ps, rs, axs, ays, degs, nobs, taus):
    """True iff velocity (vx, vy) lies inside at least one of the cones."""
    for o in range(nobs):
        ux = 2.0 * (vx - axs[o])
        uy = 2.0 * (vy - ays[o])
        px = ps[o, 0]
        py = ps[o, 1]
        if degs[o]:
            if px * ux + py * uy > 0.0:
                return True
            continue
        uu = ux * ux + uy * uy
        if uu == 0.0:
            continue
        tau = taus[o]
        t = (px * ux + py * uy) / uu
        if t < 0.0:
            t = 0.0
        elif t > tau:
            t = tau
        dx = px - ux * t
        dy = py - uy * t
        if dx * dx + dy * dy < rs[o] * rs[o]:
            return True
    return False


@njit(cache=True)
def candidate_capacity(ndirs, nmags, max_obstacles):
    return 2 + ndirs * nmags + BOUNDARY_CANDIDATES * max_obstacles


@njit(cache=True)
def build_candidates(vpx, vpy, vmax, ndirs, nmags, ps, rs, axs, ays, degs, nobs, taus, out):
    """Fill ``out`` with the deterministic candidate velocities; return count.

    Order: v_pref, zero, polar grid anchored at the v_pref direction
    (direction-major), then per-obstacle cone-boundary projections
    (left leg, right leg, truncation arc). The fixed order makes argmin
    tie-breaking deterministic.
    """
    k = 0
    out[k, 0] = vpx
    out[k, 1] = vpy
    k += 1
    out[k, 0] = 0.0
    out[k, 1] = 0.0
    k += 1
    base = 0.0
    if vpx * vpx + vpy * vpy > 0.0:
        base = math.atan2(vpy, vpx)
    for i in range(ndirs):
        ang = base + TWO_PI * i / ndirs
        ca = math.cos(ang)
        sa = math.sin(ang)
        for m in range(1, nmags + 1):
            s = vmax * m / nmags
            out[k, 0] = s * ca
            out[k, 1] = s * sa
            k += 1
    for o in range(nobs):
        px = ps[o, 0]
        py = ps[o, 1]
        d = math.sqrt(px * px + py * py)
        if degs[o]:
            # Half-plane obstacle: slide v_pref onto the boundary
            # (p . (v - apex) = 0), nudged to the feasible side.
            if d > 0.0:
                phx = px / d
                phy = py / d
                wx = vpx - axs[o]
                wy = vpy - ays[o]
                t = wx * phx + wy * phy
                cx = axs[o] + (wx - t * phx) - _NUDGE * phx
                cy = ays[o] + (wy - t * phy) - _NUDGE * phy
                norm = math.sqrt(cx * cx + cy * cy)
                if norm > vmax and norm > 0.0:
                    cx *= vmax / norm
                    cy *= vmax / norm
                out[k, 0] = cx
                out[k, 1] = cy
                k += 1
            continue
        r = rs[o]
        if d <= r:
            continue
        theta = math.atan2(py, px)
        sin_alpha = r / d
        if sin_alpha > 1.0:
            sin_alpha = 1.0
        alpha = math.asin(sin_alpha)
        # Tangent legs of the cone; project v_pref onto each leg ray
        # v(s) = apex + s * leg / 2, s >= 0, then nudge outward.
        for sgn in (1.0, -1.0):
            la = theta + sgn * alpha
            lx = math.cos(la)
            ly = math.sin(la)
            s = 2.0 * ((vpx - axs[o]) * lx + (vpy - ays[o]) * ly)
            if s < 0.0:
                s = 0.0
            nx = -ly * sgn
            ny = lx * sgn
            cx = axs[o] + 0.5 * s * lx + _NUDGE * nx
            cy = ays[o] + 0.5 * s * ly + _NUDGE * ny
            norm = math.sqrt(cx * cx + cy * cy)
            if norm > vmax and norm > 0.0:
                cx *= vmax / norm
                cy *= vmax / norm
            out[k, 0] = cx
            out[k, 1] = cy
            k += 1
        # Nearest point of the truncation arc (disc p/tau, radius r/tau).
        tau = taus[o]
        wx = 2.0 * (vpx - axs[o])
        wy = 2.0 * (vpy - ays[o])
        ccx = px / tau
        ccy = py / tau
        rr = r / tau
        dxx = wx - ccx
        dyy = wy - ccy
        dn = math.sqrt(dxx * dxx + dyy * dyy)
        if dn > 0.0:
            ux = ccx + (rr + _NUDGE) * dxx / dn
            uy = ccy + (rr + _NUDGE) * dyy / dn
            cx = axs[o] + 0.5 * ux
            cy = ays[o] + 0.5 * uy
            norm = math.sqrt(cx * cx + cy * cy)
            if norm > vmax and norm > 0.0:
                cx *= vmax / norm
                cy *= vmax / norm
            out[k, 0] = cx
            out[k, 1] = cy
            k += 1
    return k


@njit(cache=True)
def select_best(vpx, vpy, vmax, ndirs, nmags, ps, rs, axs, ays, degs, nobs, taus, cands):
    """Best feasible candidate velocity (nearest to v_pref).

    Returns (vx, vy, blocked). Earliest candidate wins ties, so the result
    is deterministic for a fixed candidate order.
    """
    n = build_candidates(vpx, vpy, vmax, ndirs, nmags, ps, rs, axs, ays, degs, nobs, taus, cands)
    best_d = 1e300
    bx = 0.0
    by = 0.0
    blocked = True
    vmax2 = vmax * vmax * (1.0 + 1e-12)
    for i in range(n):
        vx = cands[i, 0]
        vy = cands[i, 1]
        if vx * vx + vy * vy > vmax2:
            continue
        if velocity_infeasible(vx, vy, ps, rs, axs, ays, degs, nobs, taus):
            continue
        d = (vx - vpx) * (vx - vpx) + (vy - vpy) * (vy - vpy)
        if d < best_d:
            best_d = d
            bx = vx
            by = vy
            blocked = False
    return bx, by, blocked


@njit(cache=True)
def gather_cones(i, state, radius, out_ps, out_rs, out_axs, out_ays, out_degs):
    """Build cones for agent ``i`` against its frontal neighbors within ``radius``.

    ``state`` rows are [x, y, vx, vy, vpx, vpy, l, w, facing]. Returns the
    number of cones written.
    """
    n = state.shape[0]
    fx = math.cos(state[i, 8])
    fy = math.sin(state[i, 8])
    ri = 0.5 * math.sqrt(state[i, 6] ** 2 + state[i, 7] ** 2)
    nobs = 0
    for j in range(n):
        if j == i:
            continue
        dx = state[j, 0] - state[i, 0]
        dy = state[j, 1] - state[i, 1]
        if dx * dx + dy * dy > radius * radius:
            continue
        if dx * fx + dy * fy < 0.0:
            continue
        rj = 0.5 * math.sqrt(state[j, 6] ** 2 + state[j, 7] ** 2)
        r = ri + rj
        out_ps[nobs, 0] = dx
        out_ps[nobs, 1] = dy
        out_rs[nobs] = r
        out_axs[nobs] = 0.5 * (state[i, 2] + state[j, 2])
        out_ays[nobs] = 0.5 * (state[i, 3] + state[j, 3])
        out_degs[nobs] = dx * dx + dy * dy <= r * r
        nobs += 1
    return nobs


@njit(cache=True)
def step_all(state, radius, tau, vmax, dt, ndirs, nmags, min_speed, n_step):
    """Advance the first ``n_step`` agents one tick (double-buffered RVO).

    Rows beyond ``n_step`` participate as neighbors (their cones constrain
    everyone) but are not stepped; the engine uses this to let pedestrians
    yield to the robot without the crowd model driving it. All velocity
    selections read the old state; positions commit after. A reciprocal
    contact projection then separates any stepped disc pair the commit left
    overlapping: cone complements are non-convex, so two agents both picking
    feasible velocities can still close the gap by a few millimeters per
    tick during symmetric squeezes (the known RVO dance). The projection
    pushes both agents apart equally along the center line, which mirrors
    the shared-responsibility convention and keeps footprints disjoint.
    Returns (new_state, blocked_flags).
    """
    n = state.shape[0]
    out = state.copy()
    blocked = np.zeros(n, np.bool_)
    if n == 0 or n_step == 0:
        return out, blocked
    max_obs = n - 1 if n > 1 else 1
    ps = np.empty((max_obs, 2))
    rs = np.empty(max_obs)
    axs = np.empty(max_obs)
    ays = np.empty(max_obs)
    degs = np.zeros(max_obs, np.bool_)
    taus = np.full(max_obs, tau)
    cands = np.empty((candidate_capacity(ndirs, nmags, max_obs), 2))
    for i in range(n_step):
        nobs = gather_cones(i, state, radius, ps, rs, axs, ays, degs)
        vx, vy, blk = select_best(
            state[i, 4], state[i, 5], vmax, ndirs, nmags, ps, rs, axs, ays, degs, nobs, taus, cands
        )
        blocked[i] = blk
        if blk:
            vx = 0.0
            vy = 0.0
        out[i, 2] = vx
        out[i, 3] = vy
        out[i, 0] = state[i, 0] + vx * dt
        out[i, 1] = state[i, 1] + vy * dt
        if vx * vx + vy * vy > min_speed * min_speed:
            out[i, 8] = math.atan2(vy, vx)
    for _sweep in range(4):
        moved = False
        for i in range(n_step):
            ri = 0.5 * math.sqrt(out[i, 6] ** 2 + out[i, 7] ** 2)
            for j in range(i + 1, n_step):
                rj = 0.5 * math.sqrt(out[j, 6] ** 2 + out[j, 7] ** 2)
                rsum = ri + rj
                dx = out[j, 0] - out[i, 0]
                dy = out[j, 1] - out[i, 1]
                d2 = dx * dx + dy * dy
                if d2 >= rsum * rsum:
                    continue
                d = math.sqrt(d2)
                if d < 1e-12:
                    dx, dy, d = 1.0, 0.0, 1.0
                push = 0.5 * (rsum - d) * (1.0 + 1e-9)
                ux = dx / d
                uy = dy / d
                out[i, 0] -= push * ux
                out[i, 1] -= push * uy
                out[j, 0] += push * ux
                out[j, 1] += push * uy
                moved = True
        if not moved:
            break
    return out, blocked


@njit(cache=True)
def raycast(ox, oy, angles, cells, origin_x, origin_y, resolution, use_grid,
            ped_xy, ped_r, nped, max_range, step):
    """Per-beam range to the nearest occupied cell or pedestrian disc.

    Grid marching at ``step`` (<= resolution) against cell value 1; disc
    intersections are analytic. Beams that hit nothing return max_range.
    """
    nb = angles.shape[0]
    ranges = np.full(nb, max_range)
    h = cells.shape[0]
    w = cells.shape[1]
    for b in range(nb):
        ca = math.cos(angles[b])
        sa = math.sin(angles[b])
        if use_grid:
            t = step
            while t < ranges[b]:
                x = ox + t * ca
                y = oy + t * sa
                cx = int(math.floor((x - origin_x) / resolution))
                cy = int(math.floor((y - origin_y) / resolution))
                if cx < 0 or cy < 0 or cx >= w or cy >= h:
                    break
                if cells[cy, cx] == 1:
                    ranges[b] = t
                    break
                t += step
        for p in range(nped):
            rx = ped_xy[p, 0] - ox
            ry = ped_xy[p, 1] - oy
            r2 = ped_r[p] * ped_r[p]
            if rx * rx + ry * ry < r2:
                ranges[b] = 1e-6
                continue
            proj = rx * ca + ry * sa
            if proj <= 0.0:
                continue
            d2 = rx * rx + ry * ry - proj * proj
            if d2 >= r2:
                continue
            t = proj - math.sqrt(r2 - d2)
            if 0.0 < t < ranges[b]:
                ranges[b] = t
    return ranges


@njit(cache=True)
def cluster_discs(ranges, angle0, dangle, max_range, jump, out, max_arc_deg=20.0):
    """Group adjacent finite beams into obstacle arcs, fit a disc per arc.

    ``out`` is (B, 3) scratch; rows become (cx, cy, radius) in the scan
    frame. Returns the cluster count. The scan wraps, so a cluster crossing
    the last/first beam is merged. Arcs are split at ``max_arc_deg`` so long
    surfaces (walls) become strings of small hugging discs instead of one
    giant disc swallowing the free space.
    """
    nb = ranges.shape[0]
    max_len = max(1, int(nb * max_arc_deg / 360.0))
    hit = np.zeros(nb, np.bool_)
    for i in range(nb):
        hit[i] = ranges[i] < max_range * 0.999
    nclust = 0
    # Find a free beam to start from so wrap-around clusters stay whole.
    first_free = 0
    for i in range(nb):
        if not hit[i]:
            first_free = i
            break
    i0 = first_free
    run_start = -1
    prev_r = 0.0
    for k in range(nb + 1):
        i = (i0 + k) % nb
        in_cluster = hit[i] if k < nb else False
        split = False
        if in_cluster and run_start >= 0:
            if abs(ranges[i] - prev_r) > jump or (k - run_start) >= max_len:
                split = True
        if split:
            nclust = _close_cluster(ranges, angle0, dangle, run_start, k - 1, i0, nb, out, nclust)
            run_start = k
        elif in_cluster and run_start < 0:
            run_start = k
        elif not in_cluster and run_start >= 0:
            nclust = _close_cluster(ranges, angle0, dangle, run_start, k - 1, i0, nb, out, nclust)
            run_start = -1
        if in_cluster:
            prev_r = ranges[i]
    return nclust


@njit(cache=True)
def _close_cluster(ranges, angle0, dangle, k_start, k_end, i0, nb, out, nclust):
    sx = 0.0
    sy = 0.0
    cnt = 0
    for k in range(k_start, k_end + 1):
        i = (i0 + k) % nb
        a = angle0 + i * dangle
        sx += ranges[i] * math.cos(a)
        sy += ranges[i] * math.sin(a)
        cnt += 1
    cx = sx / cnt
    cy = sy / cnt
    rmax = 0.0
    for k in range(k_start, k_end + 1):
        i = (i0 + k) % nb
        a = angle0 + i * dangle
        dx = ranges[i] * math.cos(a) - cx
        dy = ranges[i] * math.sin(a) - cy
        d = math.sqrt(dx * dx + dy * dy)
        if d > rmax:
            rmax = d
    out[nclust, 0] = cx
    out[nclust, 1] = cy
    out[nclust, 2] = rmax
    return nclust + 1
