"""Compiled inner loop of the two-layer sampled-data integrator.

The kernel advances a block of steps and writes decimated trajectory rows
and event records into preallocated buffers, so the Python driver can run
arbitrarily long horizons in fixed memory chunks.
"""
import numpy as np
from numba import njit

# mode codes
MODE_NONE = 0
MODE_SINGLE = 1
MODE_DYNAMIC = 2

# attack codes
ATTACK_NONE = 0
ATTACK_OFFSET = 1
ATTACK_TABLE = 2

# layer codes in the event buffer
LAYER_PHYSICAL = 0
LAYER_AUXILIARY = 1
LAYER_JOINT = 2

# per-run scalar state
S_ETA, S_NU, S_LAST_X, S_LAST_Z, S_LAST_J, S_PREV_U, S_PREV_MX, S_PREV_MZ = range(8)
N_SCAL = 8

# running statistics
(
    T_MX, T_MZ, T_MIN_ETA, T_MIN_NU, T_ENTERED, T_U_ENTRY, T_T_ENTRY, T_MAX_EXCESS,
    T_MAX_UDOT, T_MAX_RATIO, T_OVER_X, T_OVER_Z, T_SLEW_X, T_SLEW_Z, T_DMAX,
    T_RESET_BAD, T_MIN_THR_X, T_MIN_THR_Z, T_V_GT_U, T_SEEN_OUT, T_START_IN,
    T_MAX_U, T_MAX_EN,
) = range(23)
N_STATS = 23

# coefficient vector layout
(
    C_PHYS_NUM, C_PHYS_CONST, C_PHYS_DEN, C_AUX_NUM, C_AUX_CONST, C_AUX_DEN,
    C_SW_Z, C_SW_X, C_KAPPA, C_SA_X, C_SA_Z, C_S_CONST, C_SIGMA1, C_SIGMA2,
    C_G1, C_G2, C_TRACK,
) = range(17)
N_COEF = 17


def new_stats():
    s = np.zeros(N_STATS)
    s[T_MIN_ETA] = np.inf
    s[T_MIN_NU] = np.inf
    s[T_MAX_EXCESS] = -np.inf
    s[T_U_ENTRY] = np.nan
    s[T_T_ENTRY] = np.nan
    s[T_MIN_THR_X] = np.inf
    s[T_MIN_THR_Z] = np.inf
    return s


@njit(cache=True)
def _attack(kind, A, B, x, x0, x_ad, t, tab_t, tab_d, out):
    n = x.shape[0]
    if kind == ATTACK_NONE:
        for i in range(n):
            out[i] = 0.0
    elif kind == ATTACK_OFFSET:
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += A[i, j] * x[j]
            out[i] = -s + x_ad - x[i] - B[i] * x0
    else:
        for i in range(n):
            out[i] = np.interp(t, tab_t, tab_d[:, i])


@njit(cache=True)
def _deriv(A, H, K, G, B, D, beta, x0, x, z, xb, zb, eta, nu, sig1, sig2, t,
           akind, x_ad, tab_t, tab_d, xd, zd, dvec):
    """Right-hand side with holds fixed; returns (eta_dot, nu_dot)."""
    n = x.shape[0]
    _attack(akind, A, B, x, x0, x_ad, t, tab_t, tab_d, dvec)
    ex2 = 0.0
    ez2 = 0.0
    for i in range(n):
        sa = 0.0
        sk = 0.0
        sh = 0.0
        sg = 0.0
        for j in range(n):
            sa += A[i, j] * x[j]
            sk += K[i, j] * zb[j]
            sh += H[i, j] * z[j]
            sg += G[i, j] * xb[j]
        xd[i] = sa + beta * sk + B[i] * x0 + dvec[i]
        zd[i] = sh - beta * sg + beta * D[i] * x0
        ex2 += (x[i] - xb[i]) ** 2
        ez2 += (z[i] - zb[i]) ** 2
    return -eta + sig1 * ex2, -nu + sig2 * ez2


@njit(cache=True)
def advance(k_start, k_stop, nsteps, dt, x0, beta, A, H, K, G, B, D, Px, Pz,
            x, z, xb, zb, scal, stats, coef, mode, akind, x_ad, tab_t, tab_d,
            rk4, stride, traj, ev):
    """Advance steps ``k_start .. k_stop - 1`` (plus the final sample if reached).

    Returns ``(n_rows, n_events, status, k_reached)``; status 0 is normal,
    1 means a non-finite value appeared.
    """
    n = x.shape[0]
    xd = np.empty(n)
    zd = np.empty(n)
    dvec = np.empty(n)
    # RK4 scratch
    xs = np.empty(n)
    zs = np.empty(n)
    kx = np.empty((4, n))
    kz = np.empty((4, n))
    ke = np.empty(4)
    kn = np.empty(4)
    sig1 = coef[C_SIGMA1]
    sig2 = coef[C_SIGMA2]
    g1sq = coef[C_G1] ** 2
    g2sq = coef[C_G2] ** 2
    track = coef[C_TRACK] > 0.5
    rows = 0
    nev = 0
    last = k_stop
    if last > nsteps:
        last = nsteps
    for k in range(k_start, last + 1):
        if k == last and last != nsteps:
            break
        t = k * dt
        eta = scal[S_ETA]
        nu = scal[S_NU]
        ex2 = 0.0
        ez2 = 0.0
        xt2 = 0.0
        z2 = 0.0
        for i in range(n):
            ex2 += (x[i] - xb[i]) ** 2
            ez2 += (z[i] - zb[i]) ** 2
            xt2 += (x[i] - x0) ** 2
            z2 += z[i] ** 2
        # event detection; k == 0 is the seeded transmission
        if mode == MODE_DYNAMIC:
            thr_x = coef[C_PHYS_NUM] * (eta + coef[C_PHYS_CONST]) / coef[C_PHYS_DEN]
            thr_z = coef[C_AUX_NUM] * (nu + coef[C_AUX_CONST]) / coef[C_AUX_DEN]
            if thr_x < stats[T_MIN_THR_X]:
                stats[T_MIN_THR_X] = thr_x
            if thr_z < stats[T_MIN_THR_Z]:
                stats[T_MIN_THR_Z] = thr_z
            mx = ex2 - thr_x
            mz = ez2 - thr_z
            if k > 0:
                sx = abs(mx - scal[S_PREV_MX]) / dt
                sz = abs(mz - scal[S_PREV_MZ]) / dt
                if sx > stats[T_SLEW_X]:
                    stats[T_SLEW_X] = sx
                if sz > stats[T_SLEW_Z]:
                    stats[T_SLEW_Z] = sz
            fire_x = k > 0 and ex2 >= thr_x
            fire_z = k > 0 and ez2 >= thr_z
            if fire_x:
                if mx > stats[T_OVER_X]:
                    stats[T_OVER_X] = mx
                ev[nev, 0] = t
                ev[nev, 1] = LAYER_PHYSICAL
                ev[nev, 2] = t - scal[S_LAST_X]
                ev[nev, 3] = ex2
                ev[nev, 4] = thr_x
                nev += 1
                scal[S_LAST_X] = t
                for i in range(n):
                    xb[i] = x[i]
                ex2 = 0.0
                if not (0.0 < thr_x):
                    stats[T_RESET_BAD] += 1
            if fire_z:
                if mz > stats[T_OVER_Z]:
                    stats[T_OVER_Z] = mz
                ev[nev, 0] = t
                ev[nev, 1] = LAYER_AUXILIARY
                ev[nev, 2] = t - scal[S_LAST_Z]
                ev[nev, 3] = ez2
                ev[nev, 4] = thr_z
                nev += 1
                scal[S_LAST_Z] = t
                for i in range(n):
                    zb[i] = z[i]
                ez2 = 0.0
                if not (0.0 < thr_z):
                    stats[T_RESET_BAD] += 1
            scal[S_PREV_MX] = ex2 - thr_x
            scal[S_PREV_MZ] = ez2 - thr_z
        elif mode == MODE_SINGLE:
            lhs = coef[C_SW_Z] * ez2 + coef[C_SW_X] * ex2
            rhs = coef[C_KAPPA] * (coef[C_SA_X] * xt2 + coef[C_SA_Z] * z2 + coef[C_S_CONST])
            if rhs < stats[T_MIN_THR_X]:
                stats[T_MIN_THR_X] = rhs
            m = lhs - rhs
            if k > 0:
                sx = abs(m - scal[S_PREV_MX]) / dt
                if sx > stats[T_SLEW_X]:
                    stats[T_SLEW_X] = sx
            if k > 0 and lhs >= rhs:
                if m > stats[T_OVER_X]:
                    stats[T_OVER_X] = m
                ev[nev, 0] = t
                ev[nev, 1] = LAYER_JOINT
                ev[nev, 2] = t - scal[S_LAST_J]
                ev[nev, 3] = lhs
                ev[nev, 4] = rhs
                nev += 1
                scal[S_LAST_J] = t
                scal[S_LAST_X] = t
                scal[S_LAST_Z] = t
                for i in range(n):
                    xb[i] = x[i]
                    zb[i] = z[i]
                ex2 = 0.0
                ez2 = 0.0
                if not (0.0 < rhs):
                    stats[T_RESET_BAD] += 1
                lhs = 0.0
            scal[S_PREV_MX] = lhs - rhs

        etad, nud = _deriv(A, H, K, G, B, D, beta, x0, x, z, xb, zb, eta, nu, sig1, sig2, t,
                           akind, x_ad, tab_t, tab_d, xd, zd, dvec)
        nxd = 0.0
        nzd = 0.0
        nd = 0.0
        for i in range(n):
            nxd += xd[i] ** 2
            nzd += zd[i] ** 2
            nd += dvec[i] ** 2
        nxd = np.sqrt(nxd)
        nzd = np.sqrt(nzd)
        nd = np.sqrt(nd)

        # Lyapunov values
        V = 0.0
        for i in range(n):
            for j in range(n):
                V += (x[i] - x0) * Px[i, j] * (x[j] - x0) + z[i] * Pz[i, j] * z[j]
        U = V + eta + nu
        if V > U:
            stats[T_V_GT_U] += 1
        if k > 0:
            udot = abs(U - scal[S_PREV_U]) / dt
            if udot > stats[T_MAX_UDOT]:
                stats[T_MAX_UDOT] = udot
        scal[S_PREV_U] = U
        if track:
            ratio = xt2 / g1sq + z2 / g2sq
            if k == 0:
                stats[T_START_IN] = 1.0 if ratio < 1.0 else 0.0
            if U > stats[T_MAX_U]:
                stats[T_MAX_U] = U
            if eta + nu > stats[T_MAX_EN]:
                stats[T_MAX_EN] = eta + nu
            if stats[T_ENTERED] < 0.5:
                # entry means crossing in from outside
                if ratio >= 1.0:
                    stats[T_SEEN_OUT] = 1.0
                elif stats[T_SEEN_OUT] > 0.5:
                    stats[T_ENTERED] = 1.0
                    stats[T_U_ENTRY] = U
                    stats[T_T_ENTRY] = t
                    stats[T_MAX_EXCESS] = 0.0
                    stats[T_MAX_RATIO] = ratio
            else:
                exc = U - stats[T_U_ENTRY]
                if exc > stats[T_MAX_EXCESS]:
                    stats[T_MAX_EXCESS] = exc
                if ratio > stats[T_MAX_RATIO]:
                    stats[T_MAX_RATIO] = ratio

        if k % stride == 0 or k == nsteps:
            r = traj[rows]
            r[0] = t
            for i in range(n):
                r[1 + i] = x[i]
                r[1 + n + i] = z[i]
                r[1 + 2 * n + i] = xb[i]
                r[1 + 3 * n + i] = zb[i]
                r[3 + 4 * n + i] = dvec[i]
            r[1 + 4 * n] = eta
            r[2 + 4 * n] = nu
            r[3 + 5 * n] = nxd
            r[4 + 5 * n] = nzd
            r[5 + 5 * n] = V
            r[6 + 5 * n] = U
            rows += 1
        if k == nsteps:
            return rows, nev, 0, k

        if nxd > stats[T_MX]:
            stats[T_MX] = nxd
        if nzd > stats[T_MZ]:
            stats[T_MZ] = nzd
        if nd > stats[T_DMAX]:
            stats[T_DMAX] = nd

        if rk4:
            for i in range(n):
                kx[0, i] = xd[i]
                kz[0, i] = zd[i]
            ke[0] = etad
            kn[0] = nud
            for s in range(1, 4):
                h = 0.5 * dt if s < 3 else dt
                for i in range(n):
                    xs[i] = x[i] + h * kx[s - 1, i]
                    zs[i] = z[i] + h * kz[s - 1, i]
                es = eta + h * ke[s - 1]
                ns = nu + h * kn[s - 1]
                ke[s], kn[s] = _deriv(A, H, K, G, B, D, beta, x0, xs, zs, xb, zb, es, ns, sig1, sig2,
                                      t + h, akind, x_ad, tab_t, tab_d, xd, zd, dvec)
                for i in range(n):
                    kx[s, i] = xd[i]
                    kz[s, i] = zd[i]
            for i in range(n):
                x[i] += dt / 6.0 * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
                z[i] += dt / 6.0 * (kz[0, i] + 2.0 * kz[1, i] + 2.0 * kz[2, i] + kz[3, i])
            eta += dt / 6.0 * (ke[0] + 2.0 * ke[1] + 2.0 * ke[2] + ke[3])
            nu += dt / 6.0 * (kn[0] + 2.0 * kn[1] + 2.0 * kn[2] + kn[3])
        else:
            for i in range(n):
                x[i] += dt * xd[i]
                z[i] += dt * zd[i]
            eta += dt * etad
            nu += dt * nud
        scal[S_ETA] = eta
        scal[S_NU] = nu
        if eta < stats[T_MIN_ETA]:
            stats[T_MIN_ETA] = eta
        if nu < stats[T_MIN_NU]:
            stats[T_MIN_NU] = nu
        finite = np.isfinite(eta) and np.isfinite(nu)
        for i in range(n):
            if not (np.isfinite(x[i]) and np.isfinite(z[i])):
                finite = False
        if not finite:
            return rows, nev, 1, k + 1
    return rows, nev, 0, last
