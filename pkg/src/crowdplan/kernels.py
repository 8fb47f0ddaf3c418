"""Numerical hot kernels.

Every function here is compiled with numba's ``@njit`` when available.
Setting the environment variable ``CROWDPLAN_NUMBA=0`` (before import)
selects a pure-numpy/Python fallback path with identical semantics; see
``benchmarks/bench_kernels.py`` for a speed comparison of the two paths.

Kernels operate on plain float64 ndarrays only.  Trajectory coefficients
are shaped (M, 6, 2): M quintic pieces, monomial basis on local piece
time, 2 spatial axes.
"""

import math
import os

import numpy as np

_flag = os.environ.get("CROWDPLAN_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "off")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        """Identity decorator standing in for numba.njit."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def basis_row(s, order, out):
    """Write the monomial basis row of the given derivative order at s into out (6,)."""
    for k in range(6):
        out[k] = 0.0
    if order == 0:
        out[0] = 1.0
        out[1] = s
        out[2] = s * s
        out[3] = s ** 3
        out[4] = s ** 4
        out[5] = s ** 5
    elif order == 1:
        out[1] = 1.0
        out[2] = 2.0 * s
        out[3] = 3.0 * s * s
        out[4] = 4.0 * s ** 3
        out[5] = 5.0 * s ** 4
    elif order == 2:
        out[2] = 2.0
        out[3] = 6.0 * s
        out[4] = 12.0 * s * s
        out[5] = 20.0 * s ** 3
    elif order == 3:
        out[3] = 6.0
        out[4] = 24.0 * s
        out[5] = 60.0 * s * s
    elif order == 4:
        out[4] = 24.0
        out[5] = 120.0 * s
    else:
        out[5] = 120.0


@njit(cache=True)
def piece_derivatives(coeffs_piece, s, out):
    """Evaluate pos/vel/acc/jerk of one piece at local time s into out (4, 2)."""
    row = np.empty(6)
    for order in range(4):
        basis_row(s, order, row)
        for ax in range(2):
            acc = 0.0
            for k in range(6):
                acc += row[k] * coeffs_piece[k, ax]
            out[order, ax] = acc


@njit(cache=True)
def minjerk_coeffs(waypoints, durations, start_state, end_state):
    """Solve the banded continuity/optimality system for the min-jerk quintic spline.

    waypoints: (M-1, 2) interior junction positions.
    durations: (M,) piece durations, all > 0.
    start_state/end_state: (3, 2) pos/vel/acc boundary rows.
    Returns coefficients (M, 6, 2).
    """
    M = durations.shape[0]
    n = 6 * M
    A = np.zeros((n, n))
    b = np.zeros((n, 2))

    # Start boundary: piece 0 at s = 0.
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    A[2, 2] = 2.0
    for ax in range(2):
        b[0, ax] = start_state[0, ax]
        b[1, ax] = start_state[1, ax]
        b[2, ax] = start_state[2, ax]

    row = np.empty(6)
    # Junction i: waypoint interpolation plus continuity of orders 0..4.
    for i in range(M - 1):
        base = 3 + 6 * i
        col = 6 * i
        T = durations[i]
        basis_row(T, 0, row)
        for k in range(6):
            A[base, col + k] = row[k]
            A[base + 1, col + k] = row[k]
        A[base + 1, col + 6] = -1.0
        basis_row(T, 1, row)
        for k in range(6):
            A[base + 2, col + k] = row[k]
        A[base + 2, col + 7] = -1.0
        basis_row(T, 2, row)
        for k in range(6):
            A[base + 3, col + k] = row[k]
        A[base + 3, col + 8] = -2.0
        basis_row(T, 3, row)
        for k in range(6):
            A[base + 4, col + k] = row[k]
        A[base + 4, col + 9] = -6.0
        basis_row(T, 4, row)
        for k in range(6):
            A[base + 5, col + k] = row[k]
        A[base + 5, col + 10] = -24.0
        for ax in range(2):
            b[base, ax] = waypoints[i, ax]

    # End boundary: last piece at s = T_M.
    Tm = durations[M - 1]
    col = 6 * (M - 1)
    for order in range(3):
        basis_row(Tm, order, row)
        for k in range(6):
            A[n - 3 + order, col + k] = row[k]
        for ax in range(2):
            b[n - 3 + order, ax] = end_state[order, ax]

    flat = np.linalg.solve(A, b)
    coeffs = np.empty((M, 6, 2))
    for i in range(M):
        for k in range(6):
            for ax in range(2):
                coeffs[i, k, ax] = flat[6 * i + k, ax]
    return coeffs


@njit(cache=True)
def minjerk_backprop(coeffs, durations, grad_coeffs, grad_dur_direct):
    """Pull gradients back through the linear construction map.

    Solves A^T lam = grad_coeffs and extracts waypoint rows; duration
    gradients gain the -lam^T (dA/dT) c correction on the rows that
    evaluate a piece at its own end time.
    Returns (grad_waypoints (M-1, 2), grad_durations (M,)).
    """
    M = durations.shape[0]
    n = 6 * M
    A = np.zeros((n, n))

    A[0, 0] = 1.0
    A[1, 1] = 1.0
    A[2, 2] = 2.0
    row = np.empty(6)
    for i in range(M - 1):
        base = 3 + 6 * i
        col = 6 * i
        T = durations[i]
        basis_row(T, 0, row)
        for k in range(6):
            A[base, col + k] = row[k]
            A[base + 1, col + k] = row[k]
        A[base + 1, col + 6] = -1.0
        basis_row(T, 1, row)
        for k in range(6):
            A[base + 2, col + k] = row[k]
        A[base + 2, col + 7] = -1.0
        basis_row(T, 2, row)
        for k in range(6):
            A[base + 3, col + k] = row[k]
        A[base + 3, col + 8] = -2.0
        basis_row(T, 3, row)
        for k in range(6):
            A[base + 4, col + k] = row[k]
        A[base + 4, col + 9] = -6.0
        basis_row(T, 4, row)
        for k in range(6):
            A[base + 5, col + k] = row[k]
        A[base + 5, col + 10] = -24.0
    Tm = durations[M - 1]
    col = 6 * (M - 1)
    for order in range(3):
        basis_row(Tm, order, row)
        for k in range(6):
            A[n - 3 + order, col + k] = row[k]

    G = np.empty((n, 2))
    for i in range(M):
        for k in range(6):
            for ax in range(2):
                G[6 * i + k, ax] = grad_coeffs[i, k, ax]
    lam = np.linalg.solve(A.T, G)

    grad_wp = np.empty((M - 1, 2))
    for i in range(M - 1):
        for ax in range(2):
            grad_wp[i, ax] = lam[3 + 6 * i, ax]

    grad_T = grad_dur_direct.copy()
    deriv = np.empty((6, 2))
    for i in range(M):
        T = durations[i]
        # Derivatives of orders 1..5 of piece i at s = T.
        for order in range(1, 6):
            basis_row(T, order, row)
            for ax in range(2):
                acc = 0.0
                for k in range(6):
                    acc += row[k] * coeffs[i, k, ax]
                deriv[order, ax] = acc
        if i < M - 1:
            base = 3 + 6 * i
            for ax in range(2):
                grad_T[i] -= (
                    lam[base, ax] * deriv[1, ax]
                    + lam[base + 1, ax] * deriv[1, ax]
                    + lam[base + 2, ax] * deriv[2, ax]
                    + lam[base + 3, ax] * deriv[3, ax]
                    + lam[base + 4, ax] * deriv[4, ax]
                    + lam[base + 5, ax] * deriv[5, ax]
                )
        else:
            for ax in range(2):
                grad_T[i] -= (
                    lam[n - 3, ax] * deriv[1, ax]
                    + lam[n - 2, ax] * deriv[2, ax]
                    + lam[n - 1, ax] * deriv[3, ax]
                )
    return grad_wp, grad_T


@njit(cache=True)
def l1_relax_scalar(x, mu):
    """One-sided C1 Huber hinge; returns (value, derivative)."""
    if x <= 0.0:
        return 0.0, 0.0
    if x <= mu:
        return x * x / (2.0 * mu), x / mu
    return x - 0.5 * mu, 1.0


@njit(cache=True)
def control_effort_grad(coeffs, durations):
    """Closed-form squared-jerk integral and its coefficient/duration gradients."""
    M = durations.shape[0]
    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    for i in range(M):
        T = durations[i]
        T2 = T * T
        T3 = T2 * T
        T4 = T3 * T
        T5 = T4 * T
        for ax in range(2):
            ja = 6.0 * coeffs[i, 3, ax]
            jb = 24.0 * coeffs[i, 4, ax]
            jc = 60.0 * coeffs[i, 5, ax]
            J += (
                ja * ja * T
                + ja * jb * T2
                + (jb * jb + 2.0 * ja * jc) * T3 / 3.0
                + jb * jc * T4 / 2.0
                + jc * jc * T5 / 5.0
            )
            gc[i, 3, ax] = 6.0 * (2.0 * ja * T + jb * T2 + 2.0 * jc * T3 / 3.0)
            gc[i, 4, ax] = 24.0 * (ja * T2 + 2.0 * jb * T3 / 3.0 + jc * T4 / 2.0)
            gc[i, 5, ax] = 60.0 * (2.0 * ja * T3 / 3.0 + jb * T4 / 2.0 + 2.0 * jc * T5 / 5.0)
            jerk_end = ja + jb * T + jc * T2
            gT[i] += jerk_end * jerk_end
    return J, gc, gT


@njit(cache=True)
def feasibility_grad(coeffs, durations, n_samples, v_bar, a_bar, mu):
    """Trapezoidal penalty on squared speed/acceleration above limits."""
    M = durations.shape[0]
    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    b1 = np.empty(6)
    b2 = np.empty(6)
    state = np.empty((4, 2))
    inv = 1.0 / (n_samples - 1.0)
    for i in range(M):
        T = durations[i]
        h = T * inv
        for j in range(n_samples):
            s = j * h
            omega = 0.5 if (j == 0 or j == n_samples - 1) else 1.0
            w = h * omega
            dwdT = omega * inv
            piece_derivatives(coeffs[i], s, state)
            vx = state[1, 0]
            vy = state[1, 1]
            ax_ = state[2, 0]
            ay_ = state[2, 1]
            jx = state[3, 0]
            jy = state[3, 1]
            basis_row(s, 1, b1)
            basis_row(s, 2, b2)
            tfrac = j * inv

            sv = vx * vx + vy * vy - v_bar * v_bar
            val, dL = l1_relax_scalar(sv, mu)
            if val != 0.0 or dL != 0.0:
                J += w * val
                for k in range(6):
                    gc[i, k, 0] += w * dL * 2.0 * vx * b1[k]
                    gc[i, k, 1] += w * dL * 2.0 * vy * b1[k]
                dsv_ds = 2.0 * (vx * ax_ + vy * ay_)
                gT[i] += dwdT * val + w * dL * dsv_ds * tfrac

            sa = ax_ * ax_ + ay_ * ay_ - a_bar * a_bar
            val, dL = l1_relax_scalar(sa, mu)
            if val != 0.0 or dL != 0.0:
                J += w * val
                for k in range(6):
                    gc[i, k, 0] += w * dL * 2.0 * ax_ * b2[k]
                    gc[i, k, 1] += w * dL * 2.0 * ay_ * b2[k]
                dsa_ds = 2.0 * (ax_ * jx + ay_ * jy)
                gT[i] += dwdT * val + w * dL * dsa_ds * tfrac
    return J, gc, gT


@njit(cache=True)
def yaw_rate_grad(coeffs, durations, n_samples, yr_bar, mu, v_eps):
    """Penalty on squared flat-output yaw rate above threshold (clamped denominator)."""
    M = durations.shape[0]
    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    b1 = np.empty(6)
    b2 = np.empty(6)
    state = np.empty((4, 2))
    inv = 1.0 / (n_samples - 1.0)
    eps2 = v_eps * v_eps
    for i in range(M):
        T = durations[i]
        h = T * inv
        for j in range(n_samples):
            s = j * h
            omega = 0.5 if (j == 0 or j == n_samples - 1) else 1.0
            w = h * omega
            dwdT = omega * inv
            piece_derivatives(coeffs[i], s, state)
            vx = state[1, 0]
            vy = state[1, 1]
            ax_ = state[2, 0]
            ay_ = state[2, 1]
            jx = state[3, 0]
            jy = state[3, 1]

            v2 = vx * vx + vy * vy
            active = v2 > eps2
            den = v2 if active else eps2
            cr = vx * ay_ - vy * ax_
            yr = cr / den
            arg = yr * yr - yr_bar * yr_bar
            val, dL = l1_relax_scalar(arg, mu)
            if val == 0.0 and dL == 0.0:
                continue
            J += w * val
            basis_row(s, 1, b1)
            basis_row(s, 2, b2)
            den2 = den * den
            if active:
                dyr_dvx = (ay_ * den - cr * 2.0 * vx) / den2
                dyr_dvy = (-ax_ * den - cr * 2.0 * vy) / den2
            else:
                dyr_dvx = ay_ / den
                dyr_dvy = -ax_ / den
            dyr_dax = -vy / den
            dyr_day = vx / den
            scale = w * dL * 2.0 * yr
            for k in range(6):
                gc[i, k, 0] += scale * (dyr_dvx * b1[k] + dyr_dax * b2[k])
                gc[i, k, 1] += scale * (dyr_dvy * b1[k] + dyr_day * b2[k])
            dcr_ds = vx * jy - vy * jx
            dden_ds = 2.0 * (vx * ax_ + vy * ay_) if active else 0.0
            dyr_ds = (dcr_ds * den - cr * dden_ds) / den2
            tfrac = j * inv
            gT[i] += dwdT * val + w * dL * 2.0 * yr * dyr_ds * tfrac
    return J, gc, gT


@njit(cache=True)
def esdf_bilinear(esdf, ox, oy, res, x, y):
    """Bilinear ESDF sample at a world point.

    Returns (distance [m], d/dx, d/dy, inside). Outside the interpolable
    region the caller must treat the point as unknown space.
    """
    nx, ny = esdf.shape
    gx = (x - ox) / res - 0.5
    gy = (y - oy) / res - 0.5
    if gx < 0.0 or gy < 0.0 or gx > nx - 1.0 or gy > ny - 1.0:
        return 0.0, 0.0, 0.0, False
    i0 = int(gx)
    j0 = int(gy)
    if i0 > nx - 2:
        i0 = nx - 2
    if j0 > ny - 2:
        j0 = ny - 2
    fx = gx - i0
    fy = gy - j0
    d00 = esdf[i0, j0]
    d10 = esdf[i0 + 1, j0]
    d01 = esdf[i0, j0 + 1]
    d11 = esdf[i0 + 1, j0 + 1]
    v0 = d00 * (1.0 - fx) + d10 * fx
    v1 = d01 * (1.0 - fx) + d11 * fx
    val = v0 * (1.0 - fy) + v1 * fy
    gx_ = ((d10 - d00) * (1.0 - fy) + (d11 - d01) * fy) / res
    gy_ = (v1 - v0) / res
    return val, gx_, gy_, True


@njit(cache=True)
def static_clearance_grad(coeffs, durations, n_samples, esdf, ox, oy, res,
                          robot_radius, d_th, mu):
    """Penalty on static clearance below threshold; out-of-map samples are
    maximally penalized (clearance 0) with no spatial gradient."""
    M = durations.shape[0]
    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    b0 = np.empty(6)
    state = np.empty((4, 2))
    inv = 1.0 / (n_samples - 1.0)
    for i in range(M):
        T = durations[i]
        h = T * inv
        for j in range(n_samples):
            s = j * h
            omega = 0.5 if (j == 0 or j == n_samples - 1) else 1.0
            w = h * omega
            dwdT = omega * inv
            piece_derivatives(coeffs[i], s, state)
            px = state[0, 0]
            py = state[0, 1]
            d, dgx, dgy, inside = esdf_bilinear(esdf, ox, oy, res, px, py)
            if inside:
                ds_ = d - robot_radius
            else:
                ds_ = 0.0
                dgx = 0.0
                dgy = 0.0
            arg = d_th - ds_
            val, dL = l1_relax_scalar(arg, mu)
            if val == 0.0 and dL == 0.0:
                continue
            J += w * val
            basis_row(s, 0, b0)
            for k in range(6):
                gc[i, k, 0] += w * dL * (-dgx) * b0[k]
                gc[i, k, 1] += w * dL * (-dgy) * b0[k]
            vx = state[1, 0]
            vy = state[1, 1]
            darg_ds = -(dgx * vx + dgy * vy)
            tfrac = j * inv
            gT[i] += dwdT * val + w * dL * darg_ds * tfrac
    return J, gc, gT


@njit(cache=True)
def dynamic_clearance_grad(coeffs, durations, n_samples, peds,
                           robot_radius, d_th, mu):
    """Penalty on clearance to constant-velocity pedestrians below threshold.

    peds: (P, 5) rows (px, py, vx, vy, radius) at plan start time.
    Hard min over pedestrians; the active pedestrian supplies the subgradient.
    Duration gradients include the shift of later pieces' absolute sample
    times through earlier durations.
    """
    M = durations.shape[0]
    P = peds.shape[0]
    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    if P == 0:
        return J, gc, gT
    b0 = np.empty(6)
    state = np.empty((4, 2))
    inv = 1.0 / (n_samples - 1.0)
    offset = 0.0
    for i in range(M):
        T = durations[i]
        h = T * inv
        for j in range(n_samples):
            s = j * h
            t_abs = offset + s
            omega = 0.5 if (j == 0 or j == n_samples - 1) else 1.0
            w = h * omega
            dwdT = omega * inv
            piece_derivatives(coeffs[i], s, state)
            px = state[0, 0]
            py = state[0, 1]

            best = 1e30
            bi = -1
            for p in range(P):
                qx = peds[p, 0] + peds[p, 2] * t_abs
                qy = peds[p, 1] + peds[p, 3] * t_abs
                dx = px - qx
                dy = py - qy
                dist = math.sqrt(dx * dx + dy * dy)
                clear = dist - peds[p, 4] - robot_radius
                if clear < best:
                    best = clear
                    bi = p
            arg = d_th - best
            val, dL = l1_relax_scalar(arg, mu)
            if val == 0.0 and dL == 0.0:
                continue
            J += w * val

            qx = peds[bi, 0] + peds[bi, 2] * t_abs
            qy = peds[bi, 1] + peds[bi, 3] * t_abs
            dx = px - qx
            dy = py - qy
            dist = math.sqrt(dx * dx + dy * dy)
            if dist > 1e-12:
                ux = dx / dist
                uy = dy / dist
            else:
                ux = 0.0
                uy = 0.0
            basis_row(s, 0, b0)
            for k in range(6):
                gc[i, k, 0] += w * dL * (-ux) * b0[k]
                gc[i, k, 1] += w * dL * (-uy) * b0[k]
            # Earlier durations shift this sample's absolute time one-for-one.
            darg_dtabs = ux * peds[bi, 2] + uy * peds[bi, 3]
            for k in range(i):
                gT[k] += w * dL * darg_dtabs
            vx = state[1, 0]
            vy = state[1, 1]
            darg_ds = -(ux * (vx - peds[bi, 2]) + uy * (vy - peds[bi, 3]))
            tfrac = j * inv
            gT[i] += dwdT * val + w * dL * darg_ds * tfrac
        offset += T
    return J, gc, gT


@njit(cache=True)
def collision_scan(coeffs, durations, t_from, t_step, esdf, ox, oy, res,
                   robot_radius, peds):
    """True if any remaining-trajectory sample has negative static or
    pedestrian clearance; pedestrians extrapolate from their positions at
    the scan instant (= t_from on the trajectory clock)."""
    M = durations.shape[0]
    total = 0.0
    for i in range(M):
        total += durations[i]
    t = t_from
    while t <= total + 1e-9:
        tc = t if t < total else total
        # Locate piece (closed-left/open-right, final time to last piece).
        idx = 0
        acc = 0.0
        for i in range(M):
            if tc < acc + durations[i] or i == M - 1:
                idx = i
                break
            acc += durations[i]
        s = tc - acc
        px = 0.0
        py = 0.0
        sk = 1.0
        for k in range(6):
            px += coeffs[idx, k, 0] * sk
            py += coeffs[idx, k, 1] * sk
            sk *= s
        d, _, _, inside = esdf_bilinear(esdf, ox, oy, res, px, py)
        if inside and d - robot_radius < 0.0:
            return True
        dt_future = tc - t_from
        for p in range(peds.shape[0]):
            qx = peds[p, 0] + peds[p, 2] * dt_future
            qy = peds[p, 1] + peds[p, 3] * dt_future
            dx = px - qx
            dy = py - qy
            if math.sqrt(dx * dx + dy * dy) - peds[p, 4] - robot_radius < 0.0:
                return True
        t += t_step
    return False


@njit(cache=True)
def sfm_accelerations(pos, vel, goals, desired_speeds, radii, active_goal,
                      esdf, ox, oy, res, tau_relax, rep_a, rep_b,
                      wall_a, wall_b, robot_pos, robot_radius, include_robot):
    """Social-force accelerations for all pedestrians.

    active_goal[i] = 0 disables the goal term (pedestrian within goal
    tolerance).  Walls act through the ESDF gradient; the robot joins the
    neighbor set only when include_robot is set.
    """
    N = pos.shape[0]
    out = np.zeros((N, 2))
    for i in range(N):
        gx = goals[i, 0] - pos[i, 0]
        gy = goals[i, 1] - pos[i, 1]
        gd = math.sqrt(gx * gx + gy * gy)
        if active_goal[i] and gd > 1e-9:
            ex = gx / gd
            ey = gy / gd
            out[i, 0] = (desired_speeds[i] * ex - vel[i, 0]) / tau_relax
            out[i, 1] = (desired_speeds[i] * ey - vel[i, 1]) / tau_relax
        else:
            out[i, 0] = -vel[i, 0] / tau_relax
            out[i, 1] = -vel[i, 1] / tau_relax

        for j in range(N):
            if j == i:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            d = math.sqrt(dx * dx + dy * dy)
            if d < 1e-9:
                continue
            ea = (radii[i] + radii[j] - d) / rep_b
            if ea < -8.0:
                continue
            mag = rep_a * math.exp(ea)
            out[i, 0] += mag * dx / d
            out[i, 1] += mag * dy / d

        if include_robot:
            dx = pos[i, 0] - robot_pos[0]
            dy = pos[i, 1] - robot_pos[1]
            d = math.sqrt(dx * dx + dy * dy)
            if d > 1e-9:
                ea = (radii[i] + robot_radius - d) / rep_b
                if ea >= -8.0:
                    mag = rep_a * math.exp(ea)
                    out[i, 0] += mag * dx / d
                    out[i, 1] += mag * dy / d

        dw, ngx, ngy, inside = esdf_bilinear(esdf, ox, oy, res, pos[i, 0], pos[i, 1])
        if inside:
            ea = (radii[i] - dw) / wall_b
            if ea >= -8.0:
                nn = math.sqrt(ngx * ngx + ngy * ngy)
                if nn > 1e-9:
                    mag = wall_a * math.exp(ea)
                    out[i, 0] += mag * ngx / nn
                    out[i, 1] += mag * ngy / nn
    return out


@njit(cache=True)
def solve_objective(waypoints, tau, start_state, end_state, weights,
                    esdf, ox, oy, res, peds, limits, n_samples, mu,
                    v_eps, t_min):
    """Fused objective evaluation for the planner's inner loop.

    Runs the softplus duration transform, spline construction, every cost
    term, and the gradient pull-back in one compiled pass.  Must agree
    with the assembled per-term path to roundoff (pinned by a test).

    weights: (5,) = (w_T, w_f, w_yr, w_s, w_h).
    limits:  (6,) = (v_bar, a_bar, yr_bar, d_s_th, d_h_th, robot_radius).
    Returns (J, grad (3M-2,), coeffs (M, 6, 2), durations (M,)).
    """
    M = tau.shape[0]
    durations = np.empty(M)
    for i in range(M):
        t = tau[i]
        sp = t + math.log1p(math.exp(-t)) if t > 30.0 else math.log1p(math.exp(t))
        durations[i] = t_min + sp

    coeffs = minjerk_coeffs(waypoints, durations, start_state, end_state)

    w_T = weights[0]
    w_f = weights[1]
    w_yr = weights[2]
    w_s = weights[3]
    w_h = weights[4]
    v_bar = limits[0]
    a_bar = limits[1]
    yr_bar = limits[2]
    d_s_th = limits[3]
    d_h_th = limits[4]
    robot_radius = limits[5]
    P = peds.shape[0]

    gc = np.zeros((M, 6, 2))
    gT = np.zeros(M)
    J = 0.0
    b0 = np.empty(6)
    b1 = np.empty(6)
    b2 = np.empty(6)
    state = np.empty((4, 2))
    inv = 1.0 / (n_samples - 1.0)
    eps2 = v_eps * v_eps
    offset = 0.0
    for i in range(M):
        T = durations[i]
        h = T * inv
        for j in range(n_samples):
            s = j * h
            omega = 0.5 if (j == 0 or j == n_samples - 1) else 1.0
            w = h * omega
            dwdT = omega * inv
            tfrac = j * inv
            piece_derivatives(coeffs[i], s, state)
            px = state[0, 0]
            py = state[0, 1]
            vx = state[1, 0]
            vy = state[1, 1]
            ax_ = state[2, 0]
            ay_ = state[2, 1]
            jx = state[3, 0]
            jy = state[3, 1]
            basis_row(s, 0, b0)
            basis_row(s, 1, b1)
            basis_row(s, 2, b2)

            # Feasibility: speed and acceleration hinges.
            sv = vx * vx + vy * vy - v_bar * v_bar
            val, dL = l1_relax_scalar(sv, mu)
            if val != 0.0 or dL != 0.0:
                J += w_f * w * val
                cf = w_f * w * dL * 2.0
                for k in range(6):
                    gc[i, k, 0] += cf * vx * b1[k]
                    gc[i, k, 1] += cf * vy * b1[k]
                gT[i] += w_f * (dwdT * val + w * dL * 2.0 * (vx * ax_ + vy * ay_) * tfrac)
            sa = ax_ * ax_ + ay_ * ay_ - a_bar * a_bar
            val, dL = l1_relax_scalar(sa, mu)
            if val != 0.0 or dL != 0.0:
                J += w_f * w * val
                cf = w_f * w * dL * 2.0
                for k in range(6):
                    gc[i, k, 0] += cf * ax_ * b2[k]
                    gc[i, k, 1] += cf * ay_ * b2[k]
                gT[i] += w_f * (dwdT * val + w * dL * 2.0 * (ax_ * jx + ay_ * jy) * tfrac)

            # Yaw rate hinge with clamped denominator.
            v2 = vx * vx + vy * vy
            active = v2 > eps2
            den = v2 if active else eps2
            cr = vx * ay_ - vy * ax_
            yr = cr / den
            arg = yr * yr - yr_bar * yr_bar
            val, dL = l1_relax_scalar(arg, mu)
            if val != 0.0 or dL != 0.0:
                J += w_yr * w * val
                den2 = den * den
                if active:
                    dyr_dvx = (ay_ * den - cr * 2.0 * vx) / den2
                    dyr_dvy = (-ax_ * den - cr * 2.0 * vy) / den2
                else:
                    dyr_dvx = ay_ / den
                    dyr_dvy = -ax_ / den
                dyr_dax = -vy / den
                dyr_day = vx / den
                scale = w_yr * w * dL * 2.0 * yr
                for k in range(6):
                    gc[i, k, 0] += scale * (dyr_dvx * b1[k] + dyr_dax * b2[k])
                    gc[i, k, 1] += scale * (dyr_dvy * b1[k] + dyr_day * b2[k])
                dcr_ds = vx * jy - vy * jx
                dden_ds = 2.0 * (vx * ax_ + vy * ay_) if active else 0.0
                dyr_ds = (dcr_ds * den - cr * dden_ds) / den2
                gT[i] += w_yr * (dwdT * val + w * dL * 2.0 * yr * dyr_ds * tfrac)

            # Static clearance hinge.
            d, dgx, dgy, inside = esdf_bilinear(esdf, ox, oy, res, px, py)
            if inside:
                ds_ = d - robot_radius
            else:
                ds_ = 0.0
                dgx = 0.0
                dgy = 0.0
            arg = d_s_th - ds_
            val, dL = l1_relax_scalar(arg, mu)
            if val != 0.0 or dL != 0.0:
                J += w_s * w * val
                cf = w_s * w * dL
                for k in range(6):
                    gc[i, k, 0] += cf * (-dgx) * b0[k]
                    gc[i, k, 1] += cf * (-dgy) * b0[k]
                gT[i] += w_s * (dwdT * val + w * dL * (-(dgx * vx + dgy * vy)) * tfrac)

            # Pedestrian clearance hinge (hard min over pedestrians).
            if P > 0:
                t_abs = offset + s
                best = 1e30
                bi = -1
                for p in range(P):
                    qx = peds[p, 0] + peds[p, 2] * t_abs
                    qy = peds[p, 1] + peds[p, 3] * t_abs
                    dx = px - qx
                    dy = py - qy
                    dist = math.sqrt(dx * dx + dy * dy)
                    clear = dist - peds[p, 4] - robot_radius
                    if clear < best:
                        best = clear
                        bi = p
                arg = d_h_th - best
                val, dL = l1_relax_scalar(arg, mu)
                if val != 0.0 or dL != 0.0:
                    J += w_h * w * val
                    qx = peds[bi, 0] + peds[bi, 2] * t_abs
                    qy = peds[bi, 1] + peds[bi, 3] * t_abs
                    dx = px - qx
                    dy = py - qy
                    dist = math.sqrt(dx * dx + dy * dy)
                    if dist > 1e-12:
                        ux = dx / dist
                        uy = dy / dist
                    else:
                        ux = 0.0
                        uy = 0.0
                    cf = w_h * w * dL
                    for k in range(6):
                        gc[i, k, 0] += cf * (-ux) * b0[k]
                        gc[i, k, 1] += cf * (-uy) * b0[k]
                    darg_dtabs = ux * peds[bi, 2] + uy * peds[bi, 3]
                    for k in range(i):
                        gT[k] += w_h * w * dL * darg_dtabs
                    darg_ds = -(ux * (vx - peds[bi, 2]) + uy * (vy - peds[bi, 3]))
                    gT[i] += w_h * (dwdT * val + w * dL * darg_ds * tfrac)
        offset += T

    # Control effort (closed form) and the time weight.
    for i in range(M):
        T = durations[i]
        T2 = T * T
        T3 = T2 * T
        T4 = T3 * T
        T5 = T4 * T
        for ax in range(2):
            ja = 6.0 * coeffs[i, 3, ax]
            jb = 24.0 * coeffs[i, 4, ax]
            jc = 60.0 * coeffs[i, 5, ax]
            J += (ja * ja * T + ja * jb * T2 + (jb * jb + 2.0 * ja * jc) * T3 / 3.0
                  + jb * jc * T4 / 2.0 + jc * jc * T5 / 5.0)
            gc[i, 3, ax] += 6.0 * (2.0 * ja * T + jb * T2 + 2.0 * jc * T3 / 3.0)
            gc[i, 4, ax] += 24.0 * (ja * T2 + 2.0 * jb * T3 / 3.0 + jc * T4 / 2.0)
            gc[i, 5, ax] += 60.0 * (2.0 * ja * T3 / 3.0 + jb * T4 / 2.0 + 2.0 * jc * T5 / 5.0)
            jerk_end = ja + jb * T + jc * T2
            gT[i] += jerk_end * jerk_end
        J += w_T * T
        gT[i] += w_T

    grad_wp, grad_T = minjerk_backprop(coeffs, durations, gc, gT)
    grad = np.empty(3 * M - 2)
    for i in range(M - 1):
        grad[2 * i] = grad_wp[i, 0]
        grad[2 * i + 1] = grad_wp[i, 1]
    for i in range(M):
        # dT/dtau is the sigmoid of the pre-image.
        grad[2 * (M - 1) + i] = grad_T[i] * (1.0 - math.exp(-(durations[i] - t_min)))
    return J, grad, coeffs, durations


def warmup():
    """Force-compile every kernel on a tiny instance (no-op without numba)."""
    coeffs = np.zeros((2, 6, 2))
    coeffs[0, 3, 0] = 1.0
    durations = np.array([0.5, 0.5])
    wp = np.zeros((1, 2))
    bc = np.zeros((3, 2))
    esdf = np.ones((4, 4))
    peds = np.array([[1.0, 0.0, 0.1, 0.0, 0.3]])
    minjerk_coeffs(wp, durations, bc, bc)
    minjerk_backprop(coeffs, durations, coeffs, np.zeros(2))
    control_effort_grad(coeffs, durations)
    feasibility_grad(coeffs, durations, 5, 1.0, 1.0, 0.05)
    yaw_rate_grad(coeffs, durations, 5, 0.2, 0.05, 1e-3)
    static_clearance_grad(coeffs, durations, 5, esdf, 0.0, 0.0, 0.1, 0.4, 1.0, 0.05)
    dynamic_clearance_grad(coeffs, durations, 5, peds, 0.4, 1.0, 0.05)
    collision_scan(coeffs, durations, 0.0, 0.1, esdf, 0.0, 0.0, 0.1, 0.4, peds)
    solve_objective(wp, np.zeros(2), bc, bc, np.ones(5), esdf, 0.0, 0.0, 0.1,
                    peds, np.array([1.0, 1.0, 0.2, 1.0, 1.0, 0.4]), 5, 0.05,
                    1e-3, 0.05)
    sfm_accelerations(
        peds[:, :2].copy(), peds[:, 2:4].copy(), np.ones((1, 2)),
        np.array([1.2]), np.array([0.3]), np.array([True]),
        esdf, 0.0, 0.0, 0.1, 0.5, 3.0, 0.35, 5.0, 0.1,
        np.zeros(2), 0.4, False,
    )
