"""Level-set submanifolds M = g^(-1)(0), tangent frames and coordinate charts.

Constraint functions follow a batched, AD-friendly contract: ``g`` maps an
array of shape (..., n) to (..., m) and ``g_jac`` to (..., m, n), using only
operations from :mod:`geocut.dual` (or numpy arithmetic that those types
overload) so the same callables evaluate on plain, Dual and HyperDual input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dual import dcomp, dexpand, dsum, value
from .errors import ChartInvalid, ConstraintViolated, NewtonDiverged, RankDeficient

TOL_CONSTRAINT = 1e-10
EPS_RANK = 1e-8
EPS_CHART = 0.1


@dataclass(frozen=True)
class ConstraintSpec:
    """A submanifold of R^n of codimension m given by g(q) = 0.

    ``quadric`` optionally holds the coefficient vector c with
    g(q) = sum_i c_i q_i^2 - 1; it marks the constraint as eligible for the
    compiled fast path.  ``diameter`` is a length scale used for
    deduplication tolerances.
    """

    n: int
    m: int
    g: Callable
    g_jac: Callable
    quadric: Optional[np.ndarray] = None
    diameter: Optional[float] = None
    name: str = "constraint"

    def __post_init__(self):
        if self.m > self.n:
            raise ValueError(f"codimension m={self.m} exceeds ambient dimension n={self.n}")


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid sum_i q_i^2 / a_i^2 = 1 with strictly positive semi-axes."""

    semi_axes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.semi_axes, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("semi_axes must be a 1-D array of length >= 2")
        if np.any(a <= 0):
            raise ValueError("all semi-axes must be strictly positive")
        object.__setattr__(self, "semi_axes", a)

    @property
    def n(self) -> int:
        return self.semi_axes.size

    def constraint(self) -> ConstraintSpec:
        coeffs = 1.0 / self.semi_axes**2

        def g(q):
            return dexpand(dsum(coeffs * (q * q), -1) - 1.0, -1)

        def g_jac(q):
            return dexpand(2.0 * coeffs * q, -2)

        return ConstraintSpec(
            n=self.n,
            m=1,
            g=g,
            g_jac=g_jac,
            quadric=coeffs,
            diameter=2.0 * float(np.max(self.semi_axes)),
            name=f"ellipsoid({','.join(f'{x:g}' for x in self.semi_axes)})",
        )

    def surface_point(self, u: Sequence[float]) -> np.ndarray:
        """Map a unit vector u to the point (a_i u_i) on the ellipsoid."""
        u = np.asarray(u, dtype=float)
        return self.semi_axes * (u / np.linalg.norm(u))


def plane_constraint(n: int = 3, axis: int = -1) -> ConstraintSpec:
    """The hyperplane q[axis] = 0 in R^n (flat test geometry)."""
    axis = axis % n
    row = np.zeros((1, n))
    row[0, axis] = 1.0

    def g(q):
        return dexpand(dcomp(q, axis), -1)

    def g_jac(q):
        return row

    return ConstraintSpec(n=n, m=1, g=g, g_jac=g_jac, diameter=1.0, name=f"plane(axis={axis})")


def eval_constraint(spec: ConstraintSpec, q):
    """Return (g(q), g'(q)); total on its domain."""
    return spec.g(q), spec.g_jac(q)


def _check_on_manifold(spec, q, tol):
    gv = np.asarray(value(spec.g(q)), dtype=float)
    worst = float(np.max(np.abs(gv)))
    if worst > tol:
        raise ConstraintViolated(f"|g(q)| = {worst:.3e} exceeds tolerance {tol:.1e}")


def tangent_frame(
    spec: ConstraintSpec,
    q: np.ndarray,
    eps_rank: float = EPS_RANK,
    tol_constraint: float = TOL_CONSTRAINT,
) -> np.ndarray:
    """Orthonormal basis of ker g'(q) as columns of an (n, d) matrix, d = n - m.

    Deterministic sign convention: in each column the first component of
    largest magnitude is made positive.
    """
    q = np.asarray(value(q), dtype=float)
    _check_on_manifold(spec, q, tol_constraint)
    J = np.asarray(value(spec.g_jac(q)), dtype=float).reshape(spec.m, spec.n)
    _, sv, Vt = np.linalg.svd(J, full_matrices=True)
    if sv.size < spec.m or sv[spec.m - 1] <= eps_rank:
        raise RankDeficient(
            f"constraint Jacobian is rank deficient (smallest singular value "
            f"{sv[spec.m - 1] if sv.size else 0.0:.3e} <= {eps_rank:.1e})"
        )
    E = Vt[spec.m :].T.copy()
    for j in range(E.shape[1]):
        i = int(np.argmax(np.abs(E[:, j])))
        if E[i, j] < 0:
            E[:, j] = -E[:, j]
    return E


@dataclass(frozen=True)
class TangentChart:
    """Base point on M plus an orthonormal frame of ker g'(base)."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "frame", np.asarray(self.frame, dtype=float))
        E = self.frame
        if np.max(np.abs(E.T @ E - np.eye(E.shape[1]))) > 1e-12:
            raise ValueError("frame columns are not orthonormal to 1e-12")

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @classmethod
    def at(cls, spec: ConstraintSpec, q) -> "TangentChart":
        q = np.asarray(value(q), dtype=float)
        return cls(base=q, frame=tangent_frame(spec, q))


@dataclass(frozen=True)
class OutputChart:
    """Coordinate-deletion chart: drop m ambient axes, keep the rest.

    Valid on the region where the unit normal keeps a component of
    magnitude >= eps_chart along every dropped axis.
    """

    dropped_axis: tuple
    orientation_sign: float = 1.0
    eps_chart: float = EPS_CHART

    def __post_init__(self):
        ax = self.dropped_axis
        if isinstance(ax, (int, np.integer)):
            ax = (int(ax),)
        object.__setattr__(self, "dropped_axis", tuple(int(a) for a in ax))
        if self.orientation_sign not in (-1.0, 1.0):
            raise ValueError("orientation_sign must be +1 or -1")

    def kept_axes(self, n: int) -> tuple:
        return tuple(i for i in range(n) if i not in self.dropped_axis)


def chart_validity(spec: ConstraintSpec, out_chart: OutputChart, q) -> float:
    """Smallest unit-normal magnitude along the dropped axes at q (m = 1 geometry)."""
    J = np.asarray(value(spec.g_jac(q)), dtype=float).reshape(spec.m, spec.n)
    if spec.m == 1:
        nrm = J[0] / np.linalg.norm(J[0])
        return float(np.min(np.abs(nrm[list(out_chart.dropped_axis)])))
    sub = J[:, list(out_chart.dropped_axis)]
    scale = np.linalg.norm(J, 2)
    return float(np.linalg.svd(sub, compute_uv=False)[-1] / scale)


def chart_lift(
    spec: ConstraintSpec,
    out_chart: OutputChart,
    y: np.ndarray,
    seed_point: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Point q on M whose kept coordinates equal y, by Newton on the dropped ones."""
    if len(out_chart.dropped_axis) != spec.m:
        raise ValueError("output chart must drop exactly m axes")
    y = np.asarray(y, dtype=float)
    kept = list(out_chart.kept_axes(spec.n))
    dropped = list(out_chart.dropped_axis)
    q = np.asarray(seed_point, dtype=float).copy()
    q[kept] = y
    for _ in range(max_iter):
        r = np.asarray(value(spec.g(q)), dtype=float).reshape(spec.m)
        if np.max(np.abs(r)) <= tol:
            v = chart_validity(spec, out_chart, q)
            if v < out_chart.eps_chart:
                raise ChartInvalid(
                    f"normal component {v:.3e} below eps_chart={out_chart.eps_chart} at lifted point"
                )
            return q
        J = np.asarray(value(spec.g_jac(q)), dtype=float).reshape(spec.m, spec.n)[:, dropped]
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("singular chart-lift Newton matrix") from exc
        q[dropped] -= step
    raise NewtonDiverged(
        f"chart lift did not converge within {max_iter} iterations", residual=float(np.max(np.abs(r)))
    )


def project_to_manifold(spec: ConstraintSpec, q, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Project q onto M along the normal bundle at q (Newton on the multiplier)."""
    q = np.asarray(value(q), dtype=float)
    G = np.asarray(value(spec.g_jac(q)), dtype=float).reshape(spec.m, spec.n)
    mu = np.zeros(spec.m)
    for _ in range(max_iter):
        p = q - G.T @ mu
        r = np.asarray(value(spec.g(p)), dtype=float).reshape(spec.m)
        if np.max(np.abs(r)) <= tol:
            return p
        Jp = np.asarray(value(spec.g_jac(p)), dtype=float).reshape(spec.m, spec.n)
        try:
            mu += np.linalg.solve(Jp @ G.T, r)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("singular projection Newton matrix") from exc
    raise NewtonDiverged(f"projection did not converge within {max_iter} iterations")
