import numpy as np
import pytest

from geocut import (
    BvpProblem,
    Ellipsoid,
    count_solutions,
    discrete_legendre,
    plane_constraint,
    shooting_residual,
    solve_bvp,
)
from geocut.dual import value

SPHERE = Ellipsoid(np.ones(3)).constraint()
Q0 = np.array([1.0, 0.0, 0.0])
QN = np.array([0.0, 1.0, 0.0])


def test_shooting_residual_plane_zero():
    spec = plane_constraint(3)
    prob = BvpProblem(spec, np.zeros(3), np.array([1.0, 0.0, 0.0]), N=10)
    r = shooting_residual(prob, np.array([0.1, 0.0, 0.0]), np.zeros(1))
    assert np.max(np.abs(r)) < 1e-14


def test_shooting_residual_sphere_order_dt2():
    N = 40
    prob = BvpProblem(SPHERE, Q0, QN, N=N)
    th = (np.pi / 2) * prob.dt
    q1 = np.array([np.cos(th), np.sin(th), 0.0])
    r = shooting_residual(prob, q1, np.zeros(1))
    expected = (np.pi / 2 * prob.dt) ** 2  # tangential-extrapolation defect of the last step
    assert 0.5 * expected < np.linalg.norm(r) < 2.0 * expected


def test_shooting_residual_g_component_exact():
    prob = BvpProblem(SPHERE, Q0, QN, N=10)
    q1 = np.array([0.9, 0.1, 0.05])
    r = shooting_residual(prob, q1, np.zeros(1))
    g = float(value(SPHERE.g(q1))[0])
    assert r[-1] == g


def test_solve_bvp_plane_straight_line():
    spec = plane_constraint(3)
    prob = BvpProblem(spec, np.zeros(3), np.array([1.0, 0.5, 0.0]), N=10)
    sol = solve_bvp(prob, np.array([0.1, 0.05, 0.0]))
    assert abs(sol.length - np.linalg.norm([1.0, 0.5])) < 1e-12
    assert sol.residual <= 1e-12


def test_solve_bvp_sphere_quarter_circle():
    prob = BvpProblem(SPHERE, Q0, QN, N=40)
    q1g, _ = discrete_legendre(SPHERE, Q0, np.array([0.0, np.pi / 2, 0.0]), prob.dt)
    sol = solve_bvp(prob, q1g)
    assert abs(sol.length - np.pi / 2) <= 5e-3
    assert sol.residual <= 1e-12
    assert sol.last_step_consistent
    # trajectory endpoint hits the target
    assert np.linalg.norm(sol.trajectory.qs[-1] - QN) <= 1e-10


def test_solve_bvp_sphere_long_way():
    prob = BvpProblem(SPHERE, Q0, QN, N=40)
    q1g, _ = discrete_legendre(SPHERE, Q0, np.array([0.0, -3 * np.pi / 2, 0.0]), prob.dt)
    sol = solve_bvp(prob, q1g)
    assert abs(sol.length - 3 * np.pi / 2) <= 2e-2


def test_count_sphere_two_solutions_stable():
    prob = BvpProblem(SPHERE, Q0, QN, N=40)
    res = count_solutions(prob, 3 * np.pi / 2, grid=24)
    assert res.count == 2
    lengths = sorted(s.length for s in res.solutions)
    assert abs(lengths[0] - np.pi / 2) < 5e-3
    assert abs(lengths[1] - 3 * np.pi / 2) < 2e-2
    res2 = count_solutions(prob, 3 * np.pi / 2, grid=48)
    assert res2.count == 2


def test_count_trivial_constant():
    prob = BvpProblem(SPHERE, Q0, Q0, N=40)
    res = count_solutions(prob, 0.1, grid=8)
    assert res.count == 1
    assert res.solutions[0].length == 0.0


def test_solutions_satisfy_del_residuals():
    prob = BvpProblem(SPHERE, Q0, QN, N=30)
    res = count_solutions(prob, 3 * np.pi / 2, grid=16)
    for sol in res.solutions:
        traj = sol.trajectory
        for k in range(1, traj.n_steps):
            G = value(SPHERE.g_jac(traj.qs[k])).reshape(1, 3)
            r = (traj.qs[k + 1] - 2 * traj.qs[k] + traj.qs[k - 1]) / traj.dt + traj.dt * (
                G.T @ traj.lambdas[k - 1]
            )
            assert np.max(np.abs(r)) < 1e-10
        assert np.max(np.abs(value(SPHERE.g(traj.qs[1:])))) < 1e-10


def test_dedup_cluster_diameters():
    prob = BvpProblem(SPHERE, Q0, QN, N=30)
    res = count_solutions(prob, 3 * np.pi / 2, grid=24)
    q1s = np.array([s.q1 for s in res.solutions])
    for i in range(len(q1s)):
        for j in range(i + 1, len(q1s)):
            assert np.linalg.norm(q1s[i] - q1s[j]) > 1e-6 * 2.0  # well separated


def test_off_manifold_endpoints_rejected():
    with pytest.raises(ValueError):
        BvpProblem(SPHERE, Q0, np.array([0.0, 1.1, 0.0]), N=10)


def test_diagnostics_accounting():
    prob = BvpProblem(SPHERE, Q0, QN, N=30)
    res = count_solutions(prob, 3 * np.pi / 2, grid=16)
    assert res.n_seeds > 0
    assert 0 <= res.n_failed <= res.n_seeds
    assert res.n_converged + res.n_failed == res.n_seeds
    assert 0.0 <= res.failed_fraction < 0.5


def _all_geodesics_dense(spec, q0, qN, N, vmax=8.5, res=200):
    """Dense preimage oracle: every geodesic with |p0| <= vmax, found by
    scanning the whole chart plane for |phi(v) - qN| minima."""
    from geocut import EndpointMapSpec, TangentChart, auto_output_chart, endpoint_map_batch
    from geocut import _engine as eng
    from geocut.bvp import _package_solution, _solve_bvp_batch

    chart = TangentChart.at(spec, q0)
    ems = EndpointMapSpec("del", spec, chart, auto_output_chart(spec, -q0), N)
    ax = np.linspace(-vmax, vmax, res)
    G = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    qn, _, fail = endpoint_map_batch(ems, G, tangents=False)
    dist = np.linalg.norm(qn - qN, axis=-1)
    dist[fail != 0] = np.inf
    D = dist.reshape(res, res)
    seeds = [
        (ax[i], ax[j])
        for i in range(1, res - 1)
        for j in range(1, res - 1)
        if D[i, j] < 0.2 and D[i, j] <= D[i - 1 : i + 2, j - 1 : j + 2].min()
    ]
    prob = BvpProblem(spec, q0, qN, N)
    P0 = np.asarray(seeds) @ chart.frame.T
    q1g, _, okl = eng.legendre_step_batch(spec, q0[None, :], P0, prob.dt, prob.cfg)
    Q1 = np.asarray(value(q1g))[okl]
    Q1s, Lams, ok, rn = _solve_bvp_batch(prob, Q1, np.zeros((Q1.shape[0], spec.m)))
    sols = []
    for i in np.flatnonzero(ok):
        s = _package_solution(prob, Q1s[i], Lams[i], float(rn[i]))
        if s.last_step_consistent and all(
            np.linalg.norm(s.q1 - t.q1) > 1e-6 * (spec.diameter or 1.0) for t in sols
        ):
            sols.append(s)
    return sorted(s.length for s in sols)


def test_count_points_verified_by_dense_oracle():
    # re-derive the membership of the frozen acceptance endpoints from a
    # whole-plane preimage scan (independent of the multistart seeding)
    from geocut import Ellipsoid as _E
    from geocut import EndpointMapSpec, TangentChart, auto_output_chart, endpoint_map

    ell = _E(np.array([1.6, 1.15, 0.95]))
    spec = ell.constraint()
    q0 = ell.surface_point(np.array([0.45, 0.7, 0.55]))
    chart = TangentChart.at(spec, q0)
    ems = EndpointMapSpec("del", spec, chart, auto_output_chart(spec, -q0), 50)
    bound = 3 * np.pi / 2
    qE1 = endpoint_map(ems, np.array([2.2658788264887657, -1.9012980875991328]))
    lengths = _all_geodesics_dense(spec, q0, qE1, N=50)
    below = [l for l in lengths if l <= bound]
    assert len(below) == 3
    assert lengths[3] > bound + 0.3
    qE0 = endpoint_map(ems, np.array([0.3, 0.2]))
    lengths0 = _all_geodesics_dense(spec, q0, qE0, N=50)
    assert len([l for l in lengths0 if l <= bound]) == 1
    assert lengths0[1] > bound + 0.3
