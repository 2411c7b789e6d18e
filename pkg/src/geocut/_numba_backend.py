"""Compiled endpoint-map kernels for quadric constraints g(q) = sum c_j q_j^2 - 1.

Each kernel integrates a batch of initial conditions and propagates ``s``
tangent directions alongside the values: the multiplier Newton runs on
values only; one final iteration is replayed with first-order dual algebra
(matching geocut._engine exactly, to roundoff).  fail[b] is 0 on success,
else the 1-based step index at which Newton failed.
"""
import numpy as np
from numba import njit, prange

MIN_DAMP = 1.0 / 64.0 * (1.0 + 1e-12)


@njit(cache=True)
def _residual(c, base, Gvec, fac, lam):
    r = -1.0
    for j in range(base.shape[0]):
        y = base[j] - fac * lam * Gvec[j]
        r += c[j] * y * y
    return r


@njit(cache=True)
def _solve_lambda(c, base, Gvec, fac, lam0, tol, maxiter, damp0):
    """Damped scalar Newton for g(base - fac*lam*Gvec) = 0."""
    lam = lam0
    r = _residual(c, base, Gvec, fac, lam)
    if not np.isfinite(r):
        return lam, False
    it = 0
    while it < maxiter:
        if abs(r) <= tol:
            return lam, True
        it += 1
        rp = 0.0
        for j in range(base.shape[0]):
            y = base[j] - fac * lam * Gvec[j]
            rp += 2.0 * c[j] * y * (-fac * Gvec[j])
        if not np.isfinite(rp) or abs(rp) < 1e-300:
            return lam, False
        step = r / rp
        alpha = damp0
        lam_c = lam - alpha * step
        rc = _residual(c, base, Gvec, fac, lam_c)
        if not np.isfinite(rc):
            rc = np.inf
        while rc > abs(r) and alpha > MIN_DAMP:
            alpha *= 0.5
            lam_c = lam - alpha * step
            rc = _residual(c, base, Gvec, fac, lam_c)
            if not np.isfinite(rc):
                rc = np.inf
        lam = lam_c
        if not np.isfinite(rc):
            return lam, False
        r = rc
    return lam, abs(r) <= tol


@njit(cache=True)
def _polish_lambda(c, base, dbase, Gvec, dG, fac, lam, y, dy, dlam):
    """Replay the final Newton iteration with first-order tangents.

    Writes the polished position into (y, dy) and the multiplier tangents
    into dlam; returns the polished multiplier value.
    """
    n = base.shape[0]
    s = dlam.shape[0]
    r = -1.0
    rp = 0.0
    for j in range(n):
        yj = base[j] - fac * lam * Gvec[j]
        y[j] = yj
        r += c[j] * yj * yj
        rp += 2.0 * c[j] * yj * (-fac * Gvec[j])
    for t in range(s):
        dr = 0.0
        drp = 0.0
        for j in range(n):
            dyj = dbase[j, t] - fac * lam * dG[j, t]
            dr += 2.0 * c[j] * y[j] * dyj
            drp += -fac * 2.0 * c[j] * (dyj * Gvec[j] + y[j] * dG[j, t])
        dlam[t] = -(dr * rp - r * drp) / (rp * rp)
    lam_new = lam - r / rp
    for j in range(n):
        y[j] = base[j] - fac * lam_new * Gvec[j]
        for t in range(s):
            dy[j, t] = dbase[j, t] - fac * (dlam[t] * Gvec[j] + lam_new * dG[j, t])
    return lam_new


@njit(cache=True, parallel=True)
def del_endpoint(c, q0b, p0, T0, dt, N, tol, maxiter, damp0, outq, outT, fail):
    B, n = p0.shape
    s = T0.shape[2]
    dt2 = dt * dt
    for b in prange(B):
        base = np.empty(n)
        dbase = np.empty((n, s))
        Gv = np.empty(n)
        dG = np.empty((n, s))
        y = np.empty(n)
        dy = np.empty((n, s))
        dlam = np.empty(s)
        qp = np.empty(n)
        dqp = np.empty((n, s))
        qc = np.empty(n)
        dqc = np.empty((n, s))
        for j in range(n):
            Gv[j] = 2.0 * c[j] * q0b[b, j]
            base[j] = q0b[b, j] + dt * p0[b, j]
            for t in range(s):
                dbase[j, t] = dt * T0[b, j, t]
                dG[j, t] = 0.0
        lam, ok = _solve_lambda(c, base, Gv, dt, 0.0, tol, maxiter, damp0)
        if not ok:
            fail[b] = 1
            continue
        lam = _polish_lambda(c, base, dbase, Gv, dG, dt, lam, y, dy, dlam)
        for j in range(n):
            qp[j] = q0b[b, j]
            qc[j] = y[j]
            for t in range(s):
                dqp[j, t] = 0.0
                dqc[j, t] = dy[j, t]
        lam_ws = 0.0
        failed = False
        for k in range(1, N):
            for j in range(n):
                Gv[j] = 2.0 * c[j] * qc[j]
                base[j] = 2.0 * qc[j] - qp[j]
                for t in range(s):
                    dG[j, t] = 2.0 * c[j] * dqc[j, t]
                    dbase[j, t] = 2.0 * dqc[j, t] - dqp[j, t]
            lam, ok = _solve_lambda(c, base, Gv, dt2, lam_ws, tol, maxiter, damp0)
            if not ok:
                fail[b] = k + 1
                failed = True
                break
            lam = _polish_lambda(c, base, dbase, Gv, dG, dt2, lam, y, dy, dlam)
            lam_ws = lam
            for j in range(n):
                qp[j] = qc[j]
                qc[j] = y[j]
                for t in range(s):
                    dqp[j, t] = dqc[j, t]
                    dqc[j, t] = dy[j, t]
        if failed:
            continue
        for j in range(n):
            outq[b, j] = qc[j]
            for t in range(s):
                outT[b, j, t] = dqc[j, t]


@njit(cache=True, parallel=True)
def se_endpoint(c, q0b, p0, T0, dt, N, tol, maxiter, damp0, outq, outT, fail):
    B, n = p0.shape
    s = T0.shape[2]
    dt2 = dt * dt
    for b in prange(B):
        base = np.empty(n)
        dbase = np.empty((n, s))
        Gv = np.empty(n)
        dG = np.empty((n, s))
        y = np.empty(n)
        dy = np.empty((n, s))
        dlam = np.empty(s)
        q = np.empty(n)
        dq = np.empty((n, s))
        p = np.empty(n)
        dp = np.empty((n, s))
        qn = np.empty(n)
        dqn = np.empty((n, s))
        # discrete Legendre initialisation, then p = (q1 - q0)/dt
        for j in range(n):
            Gv[j] = 2.0 * c[j] * q0b[b, j]
            base[j] = q0b[b, j] + dt * p0[b, j]
            for t in range(s):
                dbase[j, t] = dt * T0[b, j, t]
                dG[j, t] = 0.0
        lam, ok = _solve_lambda(c, base, Gv, dt, 0.0, tol, maxiter, damp0)
        if not ok:
            fail[b] = 1
            continue
        lam = _polish_lambda(c, base, dbase, Gv, dG, dt, lam, y, dy, dlam)
        for j in range(n):
            q[j] = q0b[b, j]
            p[j] = (y[j] - q0b[b, j]) / dt
            for t in range(s):
                dq[j, t] = 0.0
                dp[j, t] = dy[j, t] / dt
        lam_ws = 0.0
        failed = False
        for k in range(N):
            gqn = -1.0
            for j in range(n):
                qn[j] = q[j] + dt * p[j]
                gqn += c[j] * qn[j] * qn[j]
                for t in range(s):
                    dqn[j, t] = dq[j, t] + dt * dp[j, t]
            if abs(gqn) > 10.0 * tol:
                fail[b] = k + 1
                failed = True
                break
            for j in range(n):
                Gv[j] = 2.0 * c[j] * qn[j]
                base[j] = qn[j] + dt * p[j]
                for t in range(s):
                    dG[j, t] = 2.0 * c[j] * dqn[j, t]
                    dbase[j, t] = dqn[j, t] + dt * dp[j, t]
            lam, ok = _solve_lambda(c, base, Gv, dt2, lam_ws, tol, maxiter, damp0)
            if not ok:
                fail[b] = k + 1
                failed = True
                break
            lam = _polish_lambda(c, base, dbase, Gv, dG, dt2, lam, y, dy, dlam)
            lam_ws = lam
            for j in range(n):
                pj = p[j] - dt * lam * Gv[j]
                for t in range(s):
                    dp[j, t] = dp[j, t] - dt * (dlam[t] * Gv[j] + lam * dG[j, t])
                    dq[j, t] = dqn[j, t]
                p[j] = pj
                q[j] = qn[j]
        if failed:
            continue
        for j in range(n):
            outq[b, j] = q[j]
            for t in range(s):
                outT[b, j, t] = dq[j, t]


@njit(cache=True, parallel=True)
def rk2_endpoint(c, q0b, p0, T0, dt, N, tol, maxiter, damp0, outq, outT, fail):
    B, n = p0.shape
    s = T0.shape[2]
    half = 0.5 * dt * dt
    for b in prange(B):
        base = np.empty(n)
        dbase = np.empty((n, s))
        Gv = np.empty(n)
        dG = np.empty((n, s))
        y = np.empty(n)
        dy = np.empty((n, s))
        dlam = np.empty(s)
        q = np.empty(n)
        dq = np.empty((n, s))
        p = np.empty(n)
        dp = np.empty((n, s))
        for j in range(n):
            q[j] = q0b[b, j]
            p[j] = p0[b, j]
            for t in range(s):
                dq[j, t] = 0.0
                dp[j, t] = T0[b, j, t]
        lam_ws = 0.0
        failed = False
        for k in range(N):
            for j in range(n):
                Gv[j] = 2.0 * c[j] * q[j]
                base[j] = q[j] + dt * p[j]
                for t in range(s):
                    dG[j, t] = 2.0 * c[j] * dq[j, t]
                    dbase[j, t] = dq[j, t] + dt * dp[j, t]
            lam, ok = _solve_lambda(c, base, Gv, half, lam_ws, tol, maxiter, damp0)
            if not ok:
                fail[b] = k + 1
                failed = True
                break
            lam = _polish_lambda(c, base, dbase, Gv, dG, half, lam, y, dy, dlam)
            lam_ws = lam
            for j in range(n):
                gm = 2.0 * c[j] * (q[j] + 0.5 * dt * p[j])
                pj = p[j] - dt * lam * gm
                for t in range(s):
                    dgm = 2.0 * c[j] * (dq[j, t] + 0.5 * dt * dp[j, t])
                    dp[j, t] = dp[j, t] - dt * (dlam[t] * gm + lam * dgm)
                    dq[j, t] = dy[j, t]
                p[j] = pj
                q[j] = y[j]
        if failed:
            continue
        for j in range(n):
            outq[b, j] = q[j]
            for t in range(s):
                outT[b, j, t] = dq[j, t]


_KERNELS = {"del": del_endpoint, "sympeuler": se_endpoint, "rk2": rk2_endpoint}


def endpoint_quadric(scheme, coeffs, q0, P0, T0, dt, N, tol, maxiter, damp0):
    """Batched endpoint map with tangents via the compiled kernels.

    q0 (n,), P0 (B, n) initial momenta, T0 (B, n, s) momentum tangents.
    Returns (qN (B, n), TN (B, n, s), fail (B,)).
    """
    c = np.ascontiguousarray(coeffs, dtype=np.float64)
    P0 = np.ascontiguousarray(P0, dtype=np.float64)
    B, n = P0.shape
    T0 = np.ascontiguousarray(T0, dtype=np.float64)
    q0b = np.ascontiguousarray(np.broadcast_to(np.asarray(q0, float), (B, n)))
    outq = np.empty((B, n))
    outT = np.empty((B, n, T0.shape[2]))
    fail = np.zeros(B, dtype=np.int64)
    _KERNELS[scheme](c, q0b, P0, T0, dt, N, tol, maxiter, damp0, outq, outT, fail)
    return outq, outT, fail
