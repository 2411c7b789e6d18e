"""Batched per-step solvers shared by all discretisation schemes.

Every function here works on a flat batch: position/momentum arrays have
value shape (B, n) and may be plain ndarrays, Dual or HyperDual.  The
multiplier Newton loop always runs on stripped values; once it has
converged, the final iteration is replayed in the arithmetic of the inputs
("polish"), once for plain/Dual input and twice for HyperDual, which
reproduces implicit-function-theorem tangents without hand-coded adjoints.
The plain path replays once as well so that zero-seed dual evaluation is
bitwise identical to plain evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import dexpand, dsolve, dsum, dual_depth, dwhere, value

MIN_DAMPING = 1.0 / 64.0


@dataclass(frozen=True)
class SolverConfig:
    """Newton controls for the per-step nonlinear solves."""

    tol: float = 1e-12
    max_iter: int = 50
    damping: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


DEFAULT_CFG = SolverConfig()


def dmvT(G, lam):
    """G^T lam for G with value shape (..., m, n) and lam (..., m) -> (..., n)."""
    return dsum(G * dexpand(lam, -1), -2)


def dmatT(A, B):
    """A B^T for A, B with value shape (..., m, n) -> (..., m, m)."""
    return dsum(dexpand(A, -2) * dexpand(B, -3), -1)


def _gv(spec, q, B):
    """Plain constraint values broadcast to (B, m)."""
    g = np.asarray(value(spec.g(q)), dtype=float)
    return np.broadcast_to(g, (B, spec.m))


def _gjacv(spec, q, B):
    """Plain constraint Jacobians broadcast to (B, m, n)."""
    J = np.asarray(value(spec.g_jac(q)), dtype=float)
    return np.broadcast_to(J, (B, spec.m, spec.n))


def _solve_m(J, r):
    """Solve (k, m, m) systems; returns (step, solvable mask)."""
    k, m = r.shape
    if m == 1:
        d = J[:, 0, 0]
        good = np.isfinite(d) & (np.abs(d) > 1e-300)
        step = np.zeros_like(r)
        step[good, 0] = r[good, 0] / d[good]
        return step, good
    good = np.all(np.isfinite(J), axis=(1, 2))
    step = np.zeros_like(r)
    idx = np.flatnonzero(good)
    try:
        step[idx] = np.linalg.solve(J[idx], r[idx, :, None])[..., 0]
    except np.linalg.LinAlgError:
        for i in idx:
            try:
                step[i] = np.linalg.solve(J[i], r[i])
            except np.linalg.LinAlgError:
                good[i] = False
    return step, good


def _newton_m(residual, jac, lam0, cfg: SolverConfig):
    """Damped Newton on the multiplier system, batched with subset compaction.

    ``residual(lam, idx)`` and ``jac(lam, idx)`` evaluate the subset ``idx``
    of the batch.  Returns (lam, ok, residual_norm).
    """
    B, m = lam0.shape
    lam = lam0.astype(float).copy()
    idx0 = np.arange(B)
    r = np.array(residual(lam, idx0), dtype=float)
    rn = np.max(np.abs(r), axis=-1)
    rn = np.where(np.isfinite(rn), rn, np.inf)
    bad = ~np.isfinite(rn)
    done = (rn <= cfg.tol) | bad
    it = 0
    while it < cfg.max_iter:
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        it += 1
        la = lam[act]
        ra = r[act]
        Ja = jac(la, act)
        step, solvable = _solve_m(Ja, ra)
        if not np.all(solvable):
            sing = act[~solvable]
            bad[sing] = True
            done[sing] = True
            keep = np.flatnonzero(solvable)
            if keep.size == 0:
                continue
            act, la, ra, step = act[keep], la[keep], ra[keep], step[keep]
        rna = np.max(np.abs(ra), axis=-1)
        alpha = np.full(act.size, cfg.damping)
        cand = la - alpha[:, None] * step
        rc = np.array(residual(cand, act), dtype=float)
        rcn = np.max(np.abs(rc), axis=-1)
        rcn = np.where(np.isfinite(rcn), rcn, np.inf)
        while True:
            worse = (rcn > rna) & (alpha > MIN_DAMPING * (1 + 1e-12))
            if not np.any(worse):
                break
            w = np.flatnonzero(worse)
            alpha[w] *= 0.5
            cand[w] = la[w] - alpha[w, None] * step[w]
            rw = residual(cand[w], act[w])
            rc[w] = rw
            rwn = np.max(np.abs(rw), axis=-1)
            rcn[w] = np.where(np.isfinite(rwn), rwn, np.inf)
        lam[act] = cand
        r[act] = rc
        rn[act] = rcn
        newbad = ~np.isfinite(rcn)
        bad[act[newbad]] = True
        done[act] = (rcn <= cfg.tol) | newbad
    ok = (rn <= cfg.tol) & ~bad
    return lam, ok, rn


def _sanitize(lam, ok):
    return np.where(ok[:, None], lam, 0.0)


def _patched_system(Jl, r, ok, m, B):
    """Replace failed rows by the identity system so the polish never throws."""
    eye = np.broadcast_to(np.eye(m), (B, m, m))
    Jp = dwhere(ok[:, None, None], Jl, eye)
    rp = dwhere(ok[:, None], r, np.zeros((B, m)))
    return Jp, rp


def del_step_batch(spec, q_prev, q_cur, dt, cfg=DEFAULT_CFG, lam0=None):
    """One discrete Euler-Lagrange step: solve for (q_next, lam) from (q_prev, q_cur).

    Residuals ``(q_next - 2 q_cur + q_prev)/dt + dt g'(q_cur)^T lam`` and
    ``g(q_next)``; Newton starts at the predictor ``2 q_cur - q_prev`` so the
    root nearest to it is selected.
    """
    vp = np.asarray(value(q_prev), dtype=float)
    vc = np.asarray(value(q_cur), dtype=float)
    B = vc.shape[0]
    m = spec.m
    lam0 = np.zeros((B, m)) if lam0 is None else np.asarray(lam0, dtype=float)
    P = 2.0 * vc - vp
    G = _gjacv(spec, vc, B)
    dt2 = dt * dt

    def y_of(lam, idx):
        return P[idx] - dt2 * np.einsum("bmn,bm->bn", G[idx], lam)

    def residual(lam, idx):
        return _gv(spec, y_of(lam, idx), len(idx))

    def jac(lam, idx):
        Gy = _gjacv(spec, y_of(lam, idx), len(idx))
        return -dt2 * np.einsum("bin,bkn->bik", Gy, G[idx])

    lam, ok, _ = _newton_m(residual, jac, lam0, cfg)
    lam_d = _sanitize(lam, ok)
    reps = max(1, dual_depth(q_prev, q_cur))
    P_d = 2.0 * q_cur - q_prev
    G_d = spec.g_jac(q_cur)
    for _ in range(reps):
        y_d = P_d - dt2 * dmvT(G_d, lam_d)
        Jl = -dt2 * dmatT(spec.g_jac(y_d), G_d)
        Jl, r_d = _patched_system(Jl, spec.g(y_d), ok, m, B)
        lam_d = lam_d - dsolve(Jl, r_d)
    y_d = P_d - dt2 * dmvT(G_d, lam_d)
    return y_d, lam_d, ok


def legendre_step_batch(spec, q0, p0, dt, cfg=DEFAULT_CFG, lam0=None):
    """Discrete Legendre transform: q1 with p0 = (q1 - q0)/dt + g'(q0)^T lam, g(q1) = 0."""
    v0 = np.asarray(value(q0), dtype=float)
    vp = np.asarray(value(p0), dtype=float)
    B = max(v0.shape[0] if v0.ndim > 1 else 1, vp.shape[0])
    v0 = np.broadcast_to(v0, (B, spec.n))
    m = spec.m
    lam0 = np.zeros((B, m)) if lam0 is None else np.asarray(lam0, dtype=float)
    G0 = _gjacv(spec, v0, B)
    base = v0 + dt * vp

    def y_of(lam, idx):
        return base[idx] - dt * np.einsum("bmn,bm->bn", G0[idx], lam)

    def residual(lam, idx):
        return _gv(spec, y_of(lam, idx), len(idx))

    def jac(lam, idx):
        Gy = _gjacv(spec, y_of(lam, idx), len(idx))
        return -dt * np.einsum("bin,bkn->bik", Gy, G0[idx])

    lam, ok, _ = _newton_m(residual, jac, lam0, cfg)
    lam_d = _sanitize(lam, ok)
    reps = max(1, dual_depth(q0, p0))
    G0_d = spec.g_jac(q0)
    base_d = q0 + dt * p0
    for _ in range(reps):
        y_d = base_d - dt * dmvT(G0_d, lam_d)
        Jl = -dt * dmatT(spec.g_jac(y_d), G0_d)
        Jl, r_d = _patched_system(Jl, spec.g(y_d), ok, m, B)
        lam_d = lam_d - dsolve(Jl, r_d)
    y_d = base_d - dt * dmvT(G0_d, lam_d)
    return y_d, lam_d, ok


def se_step_batch(spec, q_cur, p_cur, dt, cfg=DEFAULT_CFG, lam0=None):
    """Constrained symplectic Euler step (SHAKE-style multiplier timing).

    q_next = q_cur + dt p_cur must already satisfy the constraint; the new
    multiplier is fixed by requiring the following position update to land
    on M.  Returns (q_next, p_next, lam, ok, constraint_ok).
    """
    vq = np.asarray(value(q_cur), dtype=float)
    vpc = np.asarray(value(p_cur), dtype=float)
    B = vq.shape[0]
    m = spec.m
    lam0 = np.zeros((B, m)) if lam0 is None else np.asarray(lam0, dtype=float)
    vqn = vq + dt * vpc
    gqn = _gv(spec, vqn, B)
    constraint_ok = np.max(np.abs(gqn), axis=-1) <= 10.0 * cfg.tol
    Gn = _gjacv(spec, vqn, B)
    dt2 = dt * dt

    def arg_of(lam, idx):
        return vqn[idx] + dt * vpc[idx] - dt2 * np.einsum("bmn,bm->bn", Gn[idx], lam)

    def residual(lam, idx):
        return _gv(spec, arg_of(lam, idx), len(idx))

    def jac(lam, idx):
        Ga = _gjacv(spec, arg_of(lam, idx), len(idx))
        return -dt2 * np.einsum("bin,bkn->bik", Ga, Gn[idx])

    lam, ok, _ = _newton_m(residual, jac, lam0, cfg)
    lam_d = _sanitize(lam, ok)
    reps = max(1, dual_depth(q_cur, p_cur))
    qn_d = q_cur + dt * p_cur
    Gn_d = spec.g_jac(qn_d)
    for _ in range(reps):
        pn_d = p_cur - dt * dmvT(Gn_d, lam_d)
        arg_d = qn_d + dt * pn_d
        Jl = -dt2 * dmatT(spec.g_jac(arg_d), Gn_d)
        Jl, r_d = _patched_system(Jl, spec.g(arg_d), ok, m, B)
        lam_d = lam_d - dsolve(Jl, r_d)
    pn_d = p_cur - dt * dmvT(Gn_d, lam_d)
    return qn_d, pn_d, lam_d, ok, constraint_ok


def rk2_step_batch(spec, q_cur, p_cur, dt, cfg=DEFAULT_CFG, lam0=None):
    """Explicit midpoint (non-symplectic) step, taken verbatim:

    the multiplier makes the position update land on M; the momentum update
    evaluates the constraint Jacobian at the half-step position.
    """
    vq = np.asarray(value(q_cur), dtype=float)
    vpc = np.asarray(value(p_cur), dtype=float)
    B = vq.shape[0]
    m = spec.m
    lam0 = np.zeros((B, m)) if lam0 is None else np.asarray(lam0, dtype=float)
    Gc = _gjacv(spec, vq, B)
    half = 0.5 * dt * dt

    def y_of(lam, idx):
        return vq[idx] + dt * vpc[idx] - half * np.einsum("bmn,bm->bn", Gc[idx], lam)

    def residual(lam, idx):
        return _gv(spec, y_of(lam, idx), len(idx))

    def jac(lam, idx):
        Gy = _gjacv(spec, y_of(lam, idx), len(idx))
        return -half * np.einsum("bin,bkn->bik", Gy, Gc[idx])

    lam, ok, _ = _newton_m(residual, jac, lam0, cfg)
    lam_d = _sanitize(lam, ok)
    reps = max(1, dual_depth(q_cur, p_cur))
    Gc_d = spec.g_jac(q_cur)
    for _ in range(reps):
        y_d = q_cur + dt * p_cur - half * dmvT(Gc_d, lam_d)
        Jl = -half * dmatT(spec.g_jac(y_d), Gc_d)
        Jl, r_d = _patched_system(Jl, spec.g(y_d), ok, m, B)
        lam_d = lam_d - dsolve(Jl, r_d)
    y_d = q_cur + dt * p_cur - half * dmvT(Gc_d, lam_d)
    Gmid_d = spec.g_jac(q_cur + (0.5 * dt) * p_cur)
    p_next = p_cur - dt * dmvT(Gmid_d, lam_d)
    return y_d, p_next, lam_d, ok


def _update_fail(fail_step, ok, step_index):
    new = (~ok) & (fail_step == 0)
    fail_step[new] = step_index
    return fail_step


def integrate_batch(scheme, spec, q0, p0, dt, N, cfg=DEFAULT_CFG, store=False):
    """Integrate a batch of trajectories over [0, 1] with dt = 1/N.

    Returns (q_end, info) where info carries ``fail_step`` ((B,), 0 = ok,
    else the 1-based step at which Newton failed) and, when ``store``,
    the full position/multiplier/momentum history.
    """
    B = np.shape(value(p0))[0]
    fail = np.zeros(B, dtype=np.int64)
    qs, lams, ps = [], [], []
    if scheme == "rk2":
        q, p = q0 + 0.0 * p0, p0  # broadcast the base point across the batch
        lam_ws = None
        if store:
            qs.append(q)
            ps.append(p)
        for k in range(N):
            q, p, lam, ok = rk2_step_batch(spec, q, p, dt, cfg, lam_ws)
            lam_ws = _sanitize(np.asarray(value(lam), dtype=float), ok)
            _update_fail(fail, ok, k + 1)
            if store:
                qs.append(q)
                ps.append(p)
                lams.append(lam)
        return q, {"fail_step": fail, "qs": qs, "lams": lams, "ps": ps}

    q1, lam_leg, ok = legendre_step_batch(spec, q0, p0, dt, cfg)
    _update_fail(fail, ok, 1)
    if scheme == "del":
        q_prev, q_cur = q0 + 0.0 * q1, q1  # broadcast q0 to the batch arithmetic
        if store:
            qs.extend([q_prev, q_cur])
        lam_ws = None
        for k in range(1, N):
            q_next, lam, ok = del_step_batch(spec, q_prev, q_cur, dt, cfg, lam_ws)
            lam_ws = _sanitize(np.asarray(value(lam), dtype=float), ok)
            _update_fail(fail, ok, k + 1)
            q_prev, q_cur = q_cur, q_next
            if store:
                qs.append(q_cur)
                lams.append(lam)
        return q_cur, {"fail_step": fail, "qs": qs, "lams": lams, "ps": ps, "lam_legendre": lam_leg}

    if scheme == "sympeuler":
        p = (q1 - q0) / dt
        q = q0 + 0.0 * q1
        if store:
            qs.append(q)
            ps.append(p)
        lam_ws = None
        for k in range(N):
            q, p, lam, ok, cok = se_step_batch(spec, q, p, dt, cfg, lam_ws)
            lam_ws = _sanitize(np.asarray(value(lam), dtype=float), ok)
            _update_fail(fail, ok & cok, k + 1)
            if store:
                qs.append(q)
                ps.append(p)
                lams.append(lam)
        return q, {"fail_step": fail, "qs": qs, "lams": lams, "ps": ps}

    raise ValueError(f"unknown scheme '{scheme}'")


def shoot_batch(spec, q0, q1, lam_last, dt, N, cfg=DEFAULT_CFG):
    """Shooting map psi: iterate the DEL recurrence from (q0, q1), close with lam_last.

    Returns (psi, fail_step).  ``q1`` and ``lam_last`` may carry tangents.
    """
    B = np.shape(value(q1))[0]
    fail = np.zeros(B, dtype=np.int64)
    q_prev = np.broadcast_to(np.asarray(value(q0), dtype=float), (B, spec.n))
    q_prev = q_prev + 0.0 * q1
    q_cur = q1
    lam_ws = None
    for k in range(1, N - 1):
        q_next, lam, ok = del_step_batch(spec, q_prev, q_cur, dt, cfg, lam_ws)
        lam_ws = _sanitize(np.asarray(value(lam), dtype=float), ok)
        _update_fail(fail, ok, k)
        q_prev, q_cur = q_cur, q_next
    G_d = spec.g_jac(q_cur)
    psi = 2.0 * q_cur - q_prev - (dt * dt) * dmvT(G_d, lam_last)
    return psi, fail
