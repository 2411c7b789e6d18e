"""Two-point boundary value solver (shooting on the DEL recurrence) and
multistart geodesic counting between fixed endpoints.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import _engine as eng
from ._engine import DEFAULT_CFG, SolverConfig
from .constraints import ConstraintSpec, TangentChart
from .dual import Dual, value
from .errors import NewtonDiverged
from .integrators import DiscreteTrajectory

__all__ = [
    "BvpProblem",
    "GeodesicSolution",
    "MultistartResult",
    "shooting_residual",
    "solve_bvp",
    "count_solutions",
]


@dataclass(frozen=True)
class BvpProblem:
    """Fixed-endpoint geodesic problem: connect q0 to qN in N steps."""

    spec: ConstraintSpec
    q0: np.ndarray
    qN: np.ndarray
    N: int
    cfg: SolverConfig = DEFAULT_CFG
    tol_constraint: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "qN", np.asarray(self.qN, dtype=float))
        if self.N < 2:
            raise ValueError("N must be at least 2")
        for name, q in (("q0", self.q0), ("qN", self.qN)):
            g = np.max(np.abs(value(self.spec.g(q))))
            if g > self.tol_constraint:
                raise ValueError(f"{name} is off the constraint manifold (|g| = {g:.2e})")

    @property
    def dt(self) -> float:
        return 1.0 / self.N


@dataclass
class GeodesicSolution:
    """One converged shooting solution.

    ``last_step_consistent`` records whether the closing step of the
    shooting map picks the same constraint root as the free-running scheme
    (Newton from the predictor).  Root-switched solutions satisfy the
    stationarity residuals but are not trajectories the scheme itself
    produces, so the multistart count discards them.
    """

    trajectory: DiscreteTrajectory
    length: float
    seed_chart_coords: np.ndarray
    q1: np.ndarray
    lambda_last: np.ndarray
    residual: float
    last_step_consistent: bool = True


@dataclass
class MultistartResult:
    solutions: List[GeodesicSolution]
    n_seeds: int
    n_converged: int
    n_failed: int
    n_rejected: int = 0  # converged but root-switched in the closing step

    @property
    def failed_fraction(self) -> float:
        return self.n_failed / self.n_seeds if self.n_seeds else 0.0

    @property
    def count(self) -> int:
        return len(self.solutions)


def shooting_residual(prob: BvpProblem, q1, lambda_last):
    """(psi(q1, lambda_last) - qN, g(q1)) for single points or batches.

    ``psi`` iterates the DEL recurrence from (q0, q1) and closes with the
    explicit last step carrying ``lambda_last``.
    """
    single = np.ndim(value(q1)) == 1
    q1b = _batch1(q1) if single else q1
    lamb = _batch1(lambda_last) if single else lambda_last
    psi, fail = eng.shoot_batch(prob.spec, prob.q0, q1b, lamb, prob.dt, prob.N, prob.cfg)
    if single and fail[0]:
        raise NewtonDiverged(
            f"DEL iteration failed at interior step {int(fail[0])}", step=int(fail[0])
        )
    from .dual import dconcat

    res = dconcat([psi - prob.qN, prob.spec.g(q1b)], -1)
    if single:
        return _take0(res)
    return res, fail


def _batch1(x):
    if isinstance(x, Dual):
        return Dual(x.val[None, :], x.der[None, ...])
    return np.asarray(x, dtype=float)[None, :]


def _take0(x):
    if isinstance(x, Dual):
        return Dual(x.val[0], x.der[0])
    return x[0]


def _rebuild_trajectory(prob: BvpProblem, q1, lam_last) -> DiscreteTrajectory:
    """Reconstruct the full DEL trajectory of a converged shooting solution."""
    spec, dt, N = prob.spec, prob.dt, prob.N
    qs = np.empty((N + 1, spec.n))
    lams = np.empty((N - 1, spec.m))
    qs[0], qs[1] = prob.q0, q1
    lam_ws = None
    for k in range(1, N - 1):
        q_next, lam, ok = eng.del_step_batch(
            spec, qs[k - 1][None], qs[k][None], dt, prob.cfg, lam_ws
        )
        if not ok[0]:
            raise NewtonDiverged(f"trajectory rebuild failed at step {k}", step=k)
        qs[k + 1] = value(q_next)[0]
        lams[k - 1] = value(lam)[0]
        lam_ws = value(lam)
    G = np.asarray(value(spec.g_jac(qs[N - 1])), dtype=float).reshape(spec.m, spec.n)
    qs[N] = 2.0 * qs[N - 1] - qs[N - 2] - dt * dt * (G.T @ lam_last)
    lams[N - 2] = lam_last
    return DiscreteTrajectory(dt=dt, qs=qs, lambdas=lams, scheme="del")


def _solve_bvp_batch(prob: BvpProblem, Q1, Lam, max_iter: int = 30):
    """Damped Newton on (q1, lam_last) for a batch of seeds; returns arrays.

    Inner per-step solves run with a reduced iteration budget: anything the
    predictor warm start cannot converge quickly is a hopeless seed, and the
    multistart accounting absorbs it as a failure.
    """
    spec = prob.spec
    n, m = spec.n, spec.m
    B = Q1.shape[0]
    x = np.concatenate([Q1, Lam], axis=1)
    seeds = np.eye(n + m)
    inner = SolverConfig(tol=prob.cfg.tol, max_iter=min(prob.cfg.max_iter, 12), damping=prob.cfg.damping)
    fast_prob = BvpProblem(spec, prob.q0, prob.qN, prob.N, inner, prob.tol_constraint)
    scale = spec.diameter if spec.diameter else max(1.0, float(np.linalg.norm(prob.qN)))
    kill = 1e3 * scale

    def eval_res(xa):
        q1 = xa[:, :n]
        lam = xa[:, n:]
        res, fail = shooting_residual(fast_prob, q1, lam)
        return np.asarray(value(res)), fail

    def eval_res_jac(xa):
        k = xa.shape[0]
        X = Dual(xa, np.broadcast_to(seeds, (k, n + m, n + m)).copy())
        res, fail = shooting_residual(fast_prob, X[:, :n], X[:, n:])
        return res.val, res.der, fail

    r, fail0 = eval_res(x)
    rn = np.max(np.abs(r), axis=-1)
    rn = np.where(np.isfinite(rn) & (fail0 == 0), rn, np.inf)
    done = rn <= prob.cfg.tol
    dead = ~np.isfinite(rn) | (rn > kill)
    for _ in range(max_iter):
        act = np.flatnonzero(~done & ~dead)
        if act.size == 0:
            break
        _, Jm, failj = eval_res_jac(x[act])  # (k, n+m, n+m): rows = residuals, cols = seeds
        bad = (failj != 0) | ~np.all(np.isfinite(Jm), axis=(1, 2))
        dead[act[bad]] = True
        good = act[~bad]
        if good.size == 0:
            continue
        sel = np.flatnonzero(~bad)
        try:
            step = np.linalg.solve(Jm[sel], r[good][:, :, None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.empty((sel.size, n + m))
            for i, s in enumerate(sel):
                try:
                    step[i] = np.linalg.solve(Jm[s], r[good[i]])
                except np.linalg.LinAlgError:
                    step[i] = np.nan
            nb = ~np.all(np.isfinite(step), axis=1)
            dead[good[nb]] = True
            good, step = good[~nb], step[~nb]
            if good.size == 0:
                continue
        alpha = np.full(good.size, prob.cfg.damping)
        rga = rn[good]
        cand = x[good] - alpha[:, None] * step
        rc, failc = eval_res(cand)
        rcn = np.max(np.abs(rc), axis=-1)
        rcn = np.where(np.isfinite(rcn) & (failc == 0), rcn, np.inf)
        for _ in range(4):
            worse = rcn > rga
            if not np.any(worse):
                break
            w = np.flatnonzero(worse)
            alpha[w] *= 0.5
            cand[w] = x[good[w]] - alpha[w, None] * step[w]
            rw, failw = eval_res(cand[w])
            rwn = np.max(np.abs(rw), axis=-1)
            rcn[w] = np.where(np.isfinite(rwn) & (failw == 0), rwn, np.inf)
            rc[w] = rw
        x[good] = cand
        r[good] = rc
        rn[good] = rcn
        dead[good[~np.isfinite(rcn) | (rcn > kill)]] = True
        done[good] = rcn <= prob.cfg.tol
    return x[:, :n], x[:, n:], done & ~dead, rn


def solve_bvp(prob: BvpProblem, q1_guess, lambda_guess=None) -> GeodesicSolution:
    """Newton on the (n+m)-dimensional shooting system from one guess."""
    q1_guess = np.asarray(q1_guess, dtype=float)
    lam = np.zeros(prob.spec.m) if lambda_guess is None else np.asarray(lambda_guess, dtype=float)
    Q1, Lam, ok, rn = _solve_bvp_batch(prob, q1_guess[None, :], lam[None, :])
    if not ok[0]:
        raise NewtonDiverged("shooting Newton did not converge", residual=float(rn[0]))
    return _package_solution(prob, Q1[0], Lam[0], float(rn[0]))


def _package_solution(prob, q1, lam, residual) -> GeodesicSolution:
    traj = _rebuild_trajectory(prob, q1, lam)
    chart = TangentChart.at(prob.spec, prob.q0)
    v = chart.frame.T @ ((q1 - prob.q0) / prob.dt)
    consistent = True
    if prob.N >= 2:
        scale = prob.spec.diameter or max(1.0, float(np.linalg.norm(traj.qs[-1])))
        try:
            free, _, okf = eng.del_step_batch(
                prob.spec, traj.qs[-3][None], traj.qs[-2][None], prob.dt, prob.cfg
            )
            consistent = bool(okf[0]) and float(
                np.linalg.norm(value(free)[0] - traj.qs[-1])
            ) <= 1e-6 * scale
        except Exception:
            consistent = False
    return GeodesicSolution(
        trajectory=traj,
        length=traj.length(),
        seed_chart_coords=v,
        q1=q1,
        lambda_last=lam,
        residual=residual,
        last_step_consistent=consistent,
    )


def _direction_grid(d: int, n_dir: int, rng) -> np.ndarray:
    """Deterministic unit directions in R^d (angles for d=2, Fibonacci for d=3)."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = 2 * np.pi * np.arange(n_dir) / n_dir + rng.uniform(0, 2 * np.pi / n_dir)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if d == 3:
        i = np.arange(n_dir) + 0.5
        phi = np.arccos(1 - 2 * i / n_dir)
        theta = np.pi * (1 + np.sqrt(5.0)) * i + rng.uniform(0, 0.1)
        return np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=-1
        )
    dirs = rng.normal(size=(n_dir, d))
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def count_solutions(
    prob: BvpProblem,
    length_bound: float,
    grid: int = 32,
    n_speeds: Optional[int] = None,
    seed: int = 0,
    length_tol: float = 1e-6,
) -> MultistartResult:
    """Multistart shooting over chart directions x speeds, deduplicated.

    Seeds are a deterministic direction grid (with a seeded angular offset)
    times speeds in (0, length_bound], plus the zero seed; converged
    solutions are deduplicated on |q1 - q1'| and filtered to
    length <= length_bound (boundary-inclusive within ``length_tol``).
    """
    if length_bound <= 0:
        raise ValueError("length_bound must be positive")
    spec = prob.spec
    chart = TangentChart.at(spec, prob.q0)
    d = chart.dim
    rng = np.random.default_rng(seed)
    dirs = _direction_grid(d, grid, rng)
    if n_speeds is None:
        n_speeds = max(4, int(np.ceil(length_bound / 0.75)))
    speeds = length_bound * (np.arange(1, n_speeds + 1)) / n_speeds
    V = (dirs[:, None, :] * speeds[None, :, None]).reshape(-1, d)
    V = np.vstack([np.zeros((1, d)), V])
    P0 = V @ chart.frame.T

    q1g, _, okl = eng.legendre_step_batch(spec, prob.q0[None, :], P0, prob.dt, prob.cfg)
    q1g = np.asarray(value(q1g))
    Q1 = q1g[okl]
    Lam = np.zeros((Q1.shape[0], spec.m))
    Q1s, Lams, ok, rn = _solve_bvp_batch(prob, Q1, Lam)

    n_seeds = V.shape[0]
    n_converged = int(np.sum(ok))
    n_failed = n_seeds - n_converged

    scale = spec.diameter if spec.diameter else max(1.0, float(np.linalg.norm(prob.qN - prob.q0)))
    dedup = 1e-6 * scale

    # deduplicate on q1 before the (per-solution) trajectory rebuild
    conv = np.flatnonzero(ok)
    order = conv[np.lexsort(tuple(Q1s[conv, j] for j in reversed(range(spec.n))) + (rn[conv],))]
    reps: List[int] = []
    for i in order:
        if all(np.linalg.norm(Q1s[i] - Q1s[r]) > dedup for r in reps):
            reps.append(int(i))

    packaged = []
    n_rejected = 0
    for i in reps:
        try:
            sol = _package_solution(prob, Q1s[i], Lams[i], float(rn[i]))
        except NewtonDiverged:
            n_failed += 1
            n_converged -= 1
            continue
        if not sol.last_step_consistent:
            n_rejected += 1
            continue
        if sol.length > length_bound * (1 + length_tol) + length_tol:
            continue
        packaged.append(sol)
    packaged.sort(key=lambda s: (s.length, tuple(s.q1)))
    picked: List[GeodesicSolution] = []
    for sol in packaged:
        if any(np.linalg.norm(sol.q1 - kept.q1) <= dedup for kept in picked):
            continue
        picked.append(sol)
    return MultistartResult(
        solutions=picked,
        n_seeds=n_seeds,
        n_converged=n_converged,
        n_failed=n_failed,
        n_rejected=n_rejected,
    )
