"""The four discretisations of the constrained geodesic problem.

``del``        discrete Euler-Lagrange two-step recurrence
``sympeuler``  constrained symplectic Euler (equivalent q-sequence to DEL)
``rk2``        explicit midpoint, non-symplectic (taken verbatim, including
               the asymmetric Jacobian evaluation points)
``kkt``        direct method: global Newton on the stacked first-order
               stationarity system of the discretised optimal control problem
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _engine as eng
from ._engine import DEFAULT_CFG, SolverConfig, dmvT
from .constraints import ConstraintSpec, project_to_manifold
from .dual import dconcat, jacobian, value
from .errors import ConstraintViolated, NewtonDiverged, RankDeficient

__all__ = [
    "SolverConfig",
    "DiscreteTrajectory",
    "del_step",
    "discrete_legendre",
    "symplectic_euler_step",
    "rk2_step",
    "integrate",
    "kkt_solve",
    "kkt_residual",
    "straight_chord_guess",
]

SCHEMES = ("del", "sympeuler", "rk2")


@dataclass
class DiscreteTrajectory:
    """Positions, multipliers and (optionally) momenta of one discrete geodesic.

    qs has shape (N+1, n); lambdas has N-1 rows for the DEL scheme and N for
    symplectic Euler / rk2; ps is present when the scheme produces momenta or
    they were requested in post-processing.
    """

    dt: float
    qs: np.ndarray
    lambdas: np.ndarray
    ps: Optional[np.ndarray] = None
    scheme: str = "del"

    def __post_init__(self):
        self.qs = np.asarray(self.qs, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.ps is not None:
            self.ps = np.asarray(self.ps, dtype=float)
        if abs(self.n_steps * self.dt - 1.0) > 1e-9:
            raise ValueError(f"N*dt = {self.n_steps * self.dt} but the time interval is [0, 1]")

    @property
    def n_steps(self) -> int:
        return self.qs.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.qs.shape[0])

    def chord_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.qs, axis=0), axis=-1)

    def length(self) -> float:
        return float(np.sum(self.chord_lengths()))


def _single(x):
    return np.asarray(x, dtype=float)[None, :]


def _raise_if_failed(ok, what, residual=None):
    if not bool(np.all(ok)):
        raise NewtonDiverged(f"{what} Newton did not converge", residual=residual)


def del_step(spec: ConstraintSpec, q_prev, q_cur, dt: float, cfg: SolverConfig = DEFAULT_CFG, lam0=None):
    """One DEL step (q_prev, q_cur) -> (q_next, lam); root nearest the predictor."""
    lam0b = None if lam0 is None else np.asarray(lam0, dtype=float)[None, :]
    q, lam, ok = eng.del_step_batch(spec, _single(q_prev), _single(q_cur), dt, cfg, lam0b)
    _raise_if_failed(ok, "DEL step")
    return value(q)[0], value(lam)[0]


def discrete_legendre(spec: ConstraintSpec, q0, p0, dt: float, cfg: SolverConfig = DEFAULT_CFG):
    """Initial momentum to first position: solve p0 = (q1-q0)/dt + g'(q0)^T lam, g(q1)=0."""
    q, lam, ok = eng.legendre_step_batch(spec, _single(q0), _single(p0), dt, cfg)
    _raise_if_failed(ok, "discrete Legendre transform")
    return value(q)[0], value(lam)[0]


def symplectic_euler_step(spec: ConstraintSpec, q_cur, p_cur, dt: float, cfg: SolverConfig = DEFAULT_CFG):
    """One constrained symplectic Euler step -> (q_next, p_next, lam_next)."""
    q, p, lam, ok, cok = eng.se_step_batch(spec, _single(q_cur), _single(p_cur), dt, cfg)
    if not bool(np.all(cok)):
        raise ConstraintViolated("q_cur + dt*p_cur does not lie on the constraint manifold")
    _raise_if_failed(ok, "symplectic Euler step")
    return value(q)[0], value(p)[0], value(lam)[0]


def rk2_step(spec: ConstraintSpec, q_cur, p_cur, dt: float, cfg: SolverConfig = DEFAULT_CFG):
    """One explicit-midpoint step -> (q_next, p_next, lam_cur)."""
    q, p, lam, ok = eng.rk2_step_batch(spec, _single(q_cur), _single(p_cur), dt, cfg)
    _raise_if_failed(ok, "explicit midpoint step")
    return value(q)[0], value(p)[0], value(lam)[0]


def integrate(
    scheme: str,
    spec: ConstraintSpec,
    q0,
    p0,
    N: int,
    cfg: SolverConfig = DEFAULT_CFG,
    momenta: bool = False,
) -> DiscreteTrajectory:
    """Integrate one trajectory over [0, 1] with dt = 1/N.

    For ``del`` and ``sympeuler`` the first position comes from the discrete
    Legendre transform of (q0, p0); symplectic Euler then starts from the
    eliminated momentum (q1 - q0)/dt, which makes its q-sequence coincide
    with the DEL one.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme '{scheme}', expected one of {SCHEMES}")
    if N < 1:
        raise ValueError("N must be at least 1")
    dt = 1.0 / N
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    _, info = eng.integrate_batch(scheme, spec, q0[None, :], p0[None, :], dt, N, cfg, store=True)
    fail = int(info["fail_step"][0])
    if fail:
        raise NewtonDiverged(f"{scheme} integration failed at step {fail}", step=fail)
    qs = np.stack([value(q)[0] for q in info["qs"]], axis=0)
    lams = (
        np.stack([value(l)[0] for l in info["lams"]], axis=0)
        if info["lams"]
        else np.zeros((0, spec.m))
    )
    ps = np.stack([value(p)[0] for p in info["ps"]], axis=0) if info["ps"] else None
    if momenta and ps is None:
        ps = np.diff(qs, axis=0) / dt  # DEL post-processing momenta
    return DiscreteTrajectory(dt=dt, qs=qs, lambdas=lams, ps=ps, scheme=scheme)


# ---------------------------------------------------------------------------
# direct (KKT) method
# ---------------------------------------------------------------------------

def _kkt_residual_of_states(spec, q0, qN, dt, qs_inner, lams_inner, N):
    """Stacked stationarity residuals in the DEL per-step scaling."""
    parts = []
    for k in range(1, N):
        q_km1 = q0 if k == 1 else qs_inner[k - 2]
        q_kp1 = qN if k == N - 1 else qs_inner[k]
        q_k = qs_inner[k - 1]
        lam_k = lams_inner[k - 1]
        Rq = (q_kp1 - 2.0 * q_k + q_km1) / dt + dt * dmvT(spec.g_jac(q_k), lam_k)
        parts.append(Rq)
        parts.append(spec.g(q_k))
    return dconcat(parts, -1)


def _unpack_kkt(x, spec, N):
    n, m = spec.n, spec.m
    qs, lams = [], []
    off = 0
    for _ in range(N - 1):
        qs.append(x[off : off + n])
        off += n
        lams.append(x[off : off + m])
        off += m
    return qs, lams


def kkt_residual(spec: ConstraintSpec, traj: DiscreteTrajectory, q0=None, qN=None) -> float:
    """Max-norm of the stacked KKT stationarity residual of a trajectory."""
    q0 = traj.qs[0] if q0 is None else np.asarray(q0, dtype=float)
    qN = traj.qs[-1] if qN is None else np.asarray(qN, dtype=float)
    N = traj.n_steps
    qs_inner = [traj.qs[k] for k in range(1, N)]
    if traj.lambdas.shape[0] >= N - 1 and traj.scheme in ("del", "kkt", "sympeuler"):
        lams = [traj.lambdas[k - 1] for k in range(1, N)]
    else:
        # recover multipliers from the positions via least squares of the DEL identity
        lams = []
        for k in range(1, N):
            G = np.asarray(value(spec.g_jac(traj.qs[k])), dtype=float).reshape(spec.m, spec.n)
            rhs = -(traj.qs[k + 1] - 2 * traj.qs[k] + traj.qs[k - 1]) / traj.dt**2
            lams.append(np.linalg.lstsq(G.T, rhs, rcond=None)[0])
    r = value(_kkt_residual_of_states(spec, q0, qN, traj.dt, qs_inner, lams, N))
    return float(np.max(np.abs(r)))


def kkt_solve(
    spec: ConstraintSpec,
    q0,
    qN,
    N: int,
    cfg: SolverConfig = DEFAULT_CFG,
    initial_guess: Optional[DiscreteTrajectory] = None,
) -> DiscreteTrajectory:
    """Direct method: global damped Newton on the stacked stationarity system.

    Unknowns are the interior (q_k, lam_k); the controls u_k = dt*mu_k and
    state multipliers mu_k = (q_{k+1}-q_k)/dt^2 are eliminated and recovered
    afterwards as the returned momenta ps = dt*mu.
    """
    q0 = np.asarray(q0, dtype=float)
    qN = np.asarray(qN, dtype=float)
    dt = 1.0 / N
    if initial_guess is None:
        initial_guess = straight_chord_guess(spec, q0, qN, N)
    x = []
    for k in range(1, N):
        x.append(initial_guess.qs[k])
        lam_k = (
            initial_guess.lambdas[k - 1]
            if initial_guess.lambdas.shape[0] >= N - 1
            else np.zeros(spec.m)
        )
        x.append(lam_k)
    x = np.concatenate(x)

    def residual_fn(xv):
        qs_inner, lams_inner = _unpack_kkt(xv, spec, N)
        return _kkt_residual_of_states(spec, q0, qN, dt, qs_inner, lams_inner, N)

    r = np.asarray(value(residual_fn(x)), dtype=float)
    rn = float(np.max(np.abs(r)))
    for _ in range(cfg.max_iter):
        if rn <= cfg.tol:
            break
        J = jacobian(residual_fn, x)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("singular KKT Newton matrix") from exc
        alpha = cfg.damping
        while True:
            x_new = x - alpha * step
            r_new = np.asarray(value(residual_fn(x_new)), dtype=float)
            rn_new = float(np.max(np.abs(r_new)))
            if np.isfinite(rn_new) and (rn_new < rn or alpha <= eng.MIN_DAMPING * (1 + 1e-12)):
                break
            alpha *= 0.5
        x, r, rn = x_new, r_new, rn_new
    if rn > cfg.tol:
        raise NewtonDiverged("stacked KKT Newton did not converge", residual=rn)
    qs_inner, lams_inner = _unpack_kkt(x, spec, N)
    qs = np.vstack([q0[None, :], np.asarray(qs_inner), qN[None, :]])
    lams = np.asarray(lams_inner)
    ps = np.diff(qs, axis=0) / dt  # dt * mu_k
    return DiscreteTrajectory(dt=dt, qs=qs, lambdas=lams, ps=ps, scheme="kkt")


def straight_chord_guess(spec: ConstraintSpec, q0, qN, N: int) -> DiscreteTrajectory:
    """Linear interpolation between the endpoints, projected onto M pointwise."""
    q0 = np.asarray(q0, dtype=float)
    qN = np.asarray(qN, dtype=float)
    ts = np.linspace(0.0, 1.0, N + 1)
    qs = np.array([project_to_manifold(spec, (1 - t) * q0 + t * qN) for t in ts])
    qs[0], qs[-1] = q0, qN
    return DiscreteTrajectory(dt=1.0 / N, qs=qs, lambdas=np.zeros((N - 1, spec.m)), scheme="kkt")
