"""Conjugate/cut-locus pipeline on a tangent chart.

The flow: the scheme induces a chart-coordinate endpoint map
phi(v) = q_N with p_0 = E v; its Jacobian (by forward AD, including through
the per-step Newton solves) gives a square chart determinant after deleting
the output-chart axes; the determinant is scanned on a mesh, its zero set
extracted by marching squares/tetrahedra and refined by bisection, mapped
forward to the locus, and each critical vertex is classified as fold, cusp
or umbilic candidate from the singular values and the kernel-directional
derivative of the determinant.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import _engine as eng
from . import backend
from ._engine import DEFAULT_CFG, SolverConfig
from .constraints import ConstraintSpec, OutputChart, TangentChart
from .dual import Dual, HyperDual, ddelete_rows, dentry, dexpand, dsum, dual_depth, jacobian, value
from .errors import ChartInvalid, EvaluationFailed, InvalidDimension
from .meshing import Extraction, marching_squares, marching_tetrahedra, _assemble_paths

LABEL_FOLD = "fold"
LABEL_CUSP = "cusp"
LABEL_UMBILIC = "umbilicCandidate"


@dataclass(frozen=True)
class EndpointMapSpec:
    """Everything needed to evaluate the chart endpoint map of one scheme."""

    scheme: str
    spec: ConstraintSpec
    chart: TangentChart
    out_chart: OutputChart
    N: int
    cfg: SolverConfig = DEFAULT_CFG

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.scheme not in ("del", "sympeuler", "rk2"):
            raise ValueError(f"unsupported scheme '{self.scheme}'")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def dt(self) -> float:
        return 1.0 / self.N


def auto_output_chart(spec: ConstraintSpec, q_ref, eps_chart: float = 0.1) -> OutputChart:
    """Drop the axis of largest unit-normal magnitude at the reference point.

    The orientation sign is the sign of that normal component, fixed for the
    whole mesh so the chart determinant is continuous over the region.
    """
    J = np.asarray(value(spec.g_jac(q_ref)), dtype=float).reshape(spec.m, spec.n)
    if spec.m != 1:
        raise InvalidDimension("automatic output charts are defined for codimension 1")
    nrm = J[0] / np.linalg.norm(J[0])
    axis = int(np.argmax(np.abs(nrm)))
    sign = 1.0 if nrm[axis] > 0 else -1.0
    return OutputChart(dropped_axis=axis, orientation_sign=sign, eps_chart=eps_chart)


def _chart_momentum(frame, v):
    """p0 = E v for single (d,) or batched (B, d) chart coordinates."""
    vv = value(v)
    if np.ndim(vv) == 1:
        return dsum(frame * v, -1)
    return dsum(frame * dexpand(v, -2), -1)


def endpoint_map(ems: EndpointMapSpec, v):
    """phi(v): endpoint of the N-step trajectory with p0 = E v (dual-capable)."""
    single = np.ndim(value(v)) == 1
    V = v
    if single:
        if isinstance(v, Dual):
            V = Dual(v.val[None, :], v.der[None, ...])
        elif isinstance(v, HyperDual):
            V = HyperDual(v.val[None, :], v.d1[None, ...], v.d2[None, ...], v.d12[None, ...])
        else:
            V = np.asarray(v, dtype=float)[None, :]
    p0 = _chart_momentum(ems.chart.frame, V)
    qn, info = eng.integrate_batch(
        ems.scheme, ems.spec, ems.chart.base[None, :], p0, ems.dt, ems.N, ems.cfg
    )
    fail = info["fail_step"]
    if single:
        if fail[0]:
            raise EvaluationFailed(f"endpoint map failed at step {int(fail[0])}", step=int(fail[0]))
        return qn[0] if not isinstance(qn, (Dual, HyperDual)) else _take0(qn)
    return qn, fail


def _take0(x):
    if isinstance(x, Dual):
        return Dual(x.val[0], x.der[0])
    if isinstance(x, HyperDual):
        return HyperDual(x.val[0], x.d1[0], x.d2[0], x.d12[0])
    return x[0]


def endpoint_map_batch(ems: EndpointMapSpec, V, tangents: bool = True):
    """Batched endpoint map; returns (qн, J, fail) with J = d phi / d v.

    J is (B, n, d) when ``tangents`` else None.  Dispatches to the compiled
    quadric kernels unless GEOCUT_BACKEND forces the numpy path.
    """
    V = np.asarray(V, dtype=float)
    B = V.shape[0]
    E = ems.chart.frame
    n, d = E.shape
    P0 = V @ E.T
    if backend.use_numba(ems.spec):
        from . import _numba_backend as nb

        s = d if tangents else 0
        T0 = np.broadcast_to(E, (B, n, d)).copy() if tangents else np.zeros((B, n, 0))
        qn, TN, fail = nb.endpoint_quadric(
            ems.scheme,
            ems.spec.quadric,
            ems.chart.base,
            P0,
            T0,
            ems.dt,
            ems.N,
            ems.cfg.tol,
            ems.cfg.max_iter,
            ems.cfg.damping,
        )
        return qn, (TN if tangents else None), fail
    if tangents:
        p0 = Dual(P0, np.broadcast_to(E, (B, n, d)).copy())
    else:
        p0 = P0
    qn, info = eng.integrate_batch(
        ems.scheme, ems.spec, ems.chart.base[None, :], p0, ems.dt, ems.N, ems.cfg
    )
    fail = info["fail_step"]
    if tangents:
        return qn.val, qn.der, fail
    return np.asarray(value(qn)), None, fail


def _det_small(M, d: int):
    """Determinant of (..., d, d) for d <= 3 via cofactor arithmetic (dual-capable)."""
    if d == 1:
        return dentry(M, 0, 0)
    if d == 2:
        return dentry(M, 0, 0) * dentry(M, 1, 1) - dentry(M, 0, 1) * dentry(M, 1, 0)
    if d == 3:
        a, b, c = dentry(M, 0, 0), dentry(M, 0, 1), dentry(M, 0, 2)
        dd, e, f = dentry(M, 1, 0), dentry(M, 1, 1), dentry(M, 1, 2)
        g, h, i = dentry(M, 2, 0), dentry(M, 2, 1), dentry(M, 2, 2)
        return a * (e * i - f * h) - b * (dd * i - f * g) + c * (dd * h - e * g)
    raise InvalidDimension(f"chart determinant implemented for d <= 3, got d = {d}")


def _chart_valid_batch(ems: EndpointMapSpec, qn) -> np.ndarray:
    spec = ems.spec
    B = qn.shape[0]
    J = np.broadcast_to(np.asarray(value(spec.g_jac(qn)), dtype=float), (B, spec.m, spec.n))
    dropped = list(ems.out_chart.dropped_axis)
    if spec.m == 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            nrm = J[:, 0, :] / np.linalg.norm(J[:, 0, :], axis=-1, keepdims=True)
        comp = np.min(np.abs(nrm[:, dropped]), axis=-1)
    else:
        sub = J[:, :, dropped]
        comp = np.linalg.svd(sub, compute_uv=False)[..., -1] / np.linalg.norm(J, axis=(1, 2))
    return np.isfinite(comp) & (comp >= ems.out_chart.eps_chart)


def chart_det_batch(ems: EndpointMapSpec, V):
    """(det, J_chart, qn, ok) at a batch of chart points.

    det is NaN where the evaluation failed or the output chart is invalid.
    """
    qn, J, fail = endpoint_map_batch(ems, V, tangents=True)
    d = ems.dim
    Jc = np.delete(J, list(ems.out_chart.dropped_axis), axis=1)
    det = ems.out_chart.orientation_sign * np.asarray(value(_det_small(Jc, d)), dtype=float)
    valid = _chart_valid_batch(ems, qn)
    ok = (fail == 0) & valid & np.isfinite(det)
    det = np.where(ok, det, np.nan)
    return det, Jc, qn, ok


def chart_det(ems: EndpointMapSpec, v):
    """Chart determinant at a single point (dual-capable for nested AD)."""
    if dual_depth(v) == 0:
        det, _, _, ok = chart_det_batch(ems, np.asarray(v, dtype=float)[None, :])
        if not ok[0]:
            raise ChartInvalid("chart determinant undefined at this point (failed or invalid chart)")
        return float(det[0])
    J = jacobian(lambda x: endpoint_map(ems, x), v)  # Dual (n, d) carrying v tangents
    Jc = ddelete_rows(J, list(ems.out_chart.dropped_axis), axis=-2)
    return ems.out_chart.orientation_sign * _det_small(Jc, ems.dim)


def grad_chart_det_batch(ems: EndpointMapSpec, V):
    """(det, grad, J_chart, qn, ok) with the determinant gradient via nested AD."""
    V = np.asarray(V, dtype=float)
    B, d = V.shape
    E = ems.chart.frame
    n = E.shape[0]
    P0 = V @ E.T
    T0 = np.broadcast_to(E, (B, n, d)).copy()
    p0 = HyperDual(P0, T0, T0.copy(), np.zeros((B, n, d, d)))
    qn_h, info = eng.integrate_batch(
        ems.scheme, ems.spec, ems.chart.base[None, :], p0, ems.dt, ems.N, ems.cfg
    )
    fail = info["fail_step"]
    J_dual = Dual(qn_h.d1, qn_h.d12)  # value dims (B, n, d), seeds = chart directions
    Jc_dual = ddelete_rows(J_dual, list(ems.out_chart.dropped_axis), axis=-2)
    det_dual = _det_small(Jc_dual, d)
    det = ems.out_chart.orientation_sign * det_dual.val
    grad = ems.out_chart.orientation_sign * det_dual.der
    qn = qn_h.val
    valid = _chart_valid_batch(ems, qn)
    ok = (fail == 0) & valid & np.isfinite(det)
    return det, grad, Jc_dual.val, qn, ok


# ---------------------------------------------------------------------------
# mesh scan
# ---------------------------------------------------------------------------

@dataclass
class MeshScan:
    """Chart-box determinant scan: node values plus failure flags."""

    box: np.ndarray  # (d, 2) lo/hi per axis
    res: tuple
    det: np.ndarray  # res-shaped node values, NaN at failures
    ok: np.ndarray  # res-shaped validity flags

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(self.box[i, 0], self.box[i, 1], self.res[i]) for i in range(self.dim)]

    def nodes(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)

    def cell_sizes(self) -> np.ndarray:
        return np.array(
            [(self.box[i, 1] - self.box[i, 0]) / (self.res[i] - 1) for i in range(self.dim)]
        )

    @property
    def n_failures(self) -> int:
        return int(np.sum(~self.ok))

    def det_scale(self) -> float:
        good = self.det[self.ok]
        return float(np.max(np.abs(good))) if good.size else 1.0


def scan_mesh(ems: EndpointMapSpec, box, res, chunk: int = 32768) -> MeshScan:
    """Evaluate the chart determinant on a node mesh (deterministic node order)."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    d = ems.dim
    if box.shape[0] != d:
        raise ValueError(f"box must have {d} axis ranges")
    if np.isscalar(res) or isinstance(res, (int, np.integer)):
        res = (int(res),) * d
    res = tuple(int(r) for r in res)
    if any(r < 2 for r in res):
        raise ValueError("mesh resolution must be at least 2 nodes per axis")
    scan = MeshScan(box=box, res=res, det=np.empty(res), ok=np.zeros(res, dtype=bool))
    nodes = scan.nodes()
    B = nodes.shape[0]
    det = np.empty(B)
    ok = np.zeros(B, dtype=bool)
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        dchunk, _, _, okchunk = chart_det_batch(ems, nodes[lo:hi])
        det[lo:hi] = dchunk
        ok[lo:hi] = okchunk
    scan.det = det.reshape(res)
    scan.ok = ok.reshape(res)
    return scan


# ---------------------------------------------------------------------------
# critical set extraction
# ---------------------------------------------------------------------------

@dataclass
class CriticalSet:
    """Zero set of the chart determinant in chart coordinates."""

    vertices: np.ndarray  # (K, d)
    vertex_det: np.ndarray  # (K,)
    refined: np.ndarray  # (K,) bool: |det| <= eps_onset reached
    paths: List[np.ndarray]  # d = 2 polylines (vertex index chains)
    triangles: np.ndarray  # d = 3 triangle mesh (T, 3)
    eps_onset: float
    det_scale: float
    cell_sizes: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def _vertex_positions(scan: MeshScan, extraction: Extraction, t):
    axes = scan.axes()
    res = scan.res
    a_idx = np.unravel_index(extraction.vertex_edges[:, 0], res)
    b_idx = np.unravel_index(extraction.vertex_edges[:, 1], res)
    va = np.stack([axes[i][a_idx[i]] for i in range(scan.dim)], axis=-1)
    vb = np.stack([axes[i][b_idx[i]] for i in range(scan.dim)], axis=-1)
    return va + t[:, None] * (vb - va), va, vb


def extract_critical_set(
    ems: EndpointMapSpec,
    scan: MeshScan,
    eps_onset_rel: float = 1e-8,
    refine: bool = True,
    max_bisect: int = 70,
) -> CriticalSet:
    """Marching extraction of det = 0 with per-vertex bisection refinement."""
    if scan.dim == 2:
        extraction = marching_squares(scan.det, scan.ok)
    elif scan.dim == 3:
        extraction = marching_tetrahedra(scan.det, scan.ok)
    else:
        raise InvalidDimension("extraction implemented for chart dimension 2 and 3")
    det_scale = scan.det_scale()
    eps_onset = eps_onset_rel * det_scale
    K = extraction.n_vertices
    if K == 0:
        return CriticalSet(
            vertices=np.zeros((0, scan.dim)),
            vertex_det=np.zeros(0),
            refined=np.zeros(0, dtype=bool),
            paths=extraction.paths,
            triangles=extraction.triangles,
            eps_onset=eps_onset,
            det_scale=det_scale,
            cell_sizes=scan.cell_sizes(),
        )
    flat = scan.det.reshape(-1)
    fa = flat[extraction.vertex_edges[:, 0]]
    fb = flat[extraction.vertex_edges[:, 1]]
    if not refine:
        pos, _, _ = _vertex_positions(scan, extraction, extraction.vertex_t)
        det_v, _, _, okv = chart_det_batch(ems, pos)
        return CriticalSet(
            vertices=pos,
            vertex_det=np.where(okv, det_v, np.nan),
            refined=np.zeros(K, dtype=bool),
            paths=extraction.paths,
            triangles=extraction.triangles,
            eps_onset=eps_onset,
            det_scale=det_scale,
            cell_sizes=scan.cell_sizes(),
        )
    _, va, vb = _vertex_positions(scan, extraction, extraction.vertex_t)
    t_lo = np.zeros(K)
    t_hi = np.ones(K)
    f_lo = fa.copy()
    t_mid = 0.5 * (t_lo + t_hi)
    f_mid = np.full(K, np.nan)
    alive = np.ones(K, dtype=bool)
    done = np.zeros(K, dtype=bool)
    for _ in range(max_bisect):
        act = np.flatnonzero(alive & ~done)
        if act.size == 0:
            break
        t_mid[act] = 0.5 * (t_lo[act] + t_hi[act])
        pos = va[act] + t_mid[act][:, None] * (vb[act] - va[act])
        dv, _, _, okv = chart_det_batch(ems, pos)
        dead = act[~okv]
        alive[dead] = False
        good = act[okv]
        f_mid[good] = dv[okv]
        conv = good[np.abs(dv[okv]) <= eps_onset]
        done[conv] = True
        rest = good[np.abs(dv[okv]) > eps_onset]
        same = np.sign(f_mid[rest]) == np.sign(f_lo[rest])
        t_lo[rest[same]] = t_mid[rest[same]]
        f_lo[rest[same]] = f_mid[rest[same]]
        t_hi[rest[~same]] = t_mid[rest[~same]]
    pos = va + t_mid[:, None] * (vb - va)
    return CriticalSet(
        vertices=pos,
        vertex_det=f_mid,
        refined=done,
        paths=extraction.paths,
        triangles=extraction.triangles,
        eps_onset=eps_onset,
        det_scale=det_scale,
        cell_sizes=scan.cell_sizes(),
    )


def map_locus(ems: EndpointMapSpec, crit: CriticalSet):
    """Map the critical set forward; returns (locus_vertices, kept, n_dropped).

    Failed vertices are dropped and their polyline edges contracted /
    incident triangles removed; ``kept`` indexes the surviving vertices.
    """
    if crit.n_vertices == 0:
        return np.zeros((0, ems.spec.n)), np.zeros(0, dtype=np.int64), 0
    qn, _, fail = endpoint_map_batch(ems, crit.vertices, tangents=False)
    keep = fail == 0
    kept = np.flatnonzero(keep)
    return qn[kept], kept, int(np.sum(~keep))


def filter_critical_set(crit: CriticalSet, kept: np.ndarray) -> CriticalSet:
    """Restrict a critical set to the kept vertex subset (paths contracted)."""
    if kept.size == crit.n_vertices:
        return crit
    remap = -np.ones(crit.n_vertices, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    paths = []
    for path in crit.paths:
        new = remap[path]
        new = new[new >= 0]
        if new.size >= 2:
            paths.append(new)
    tris = crit.triangles
    if tris.size:
        mask = np.all(remap[tris] >= 0, axis=1)
        tris = remap[tris[mask]]
    return replace(
        crit,
        vertices=crit.vertices[kept],
        vertex_det=crit.vertex_det[kept],
        refined=crit.refined[kept],
        paths=paths,
        triangles=tris,
    )


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    """Thresholds for the fold/cusp/umbilic tests (all overridable).

    ``eps_umb_rel`` gates mesh-level umbilic candidates; a candidate is
    confirmed only after the per-cluster corank-2 refinement drives
    sigma_{d-1} below ``eps_umb_confirm_rel`` (relative to the reference
    largest singular value).  The confirmation threshold separates true
    corank-2 points (refined sigma ~ 1e-13) from the near-misses a
    non-symplectic scheme produces (floor ~ 1e-6 at N = 40).
    """

    eps_cusp: float = 0.05
    eps_umb_rel: float = 1e-3
    eps_umb_gate_rel: float = 5e-3
    eps_umb_confirm_rel: float = 1e-7
    sigma1_ref: Optional[float] = None
    degenerate_fraction: float = 0.25


DEFAULT_CLASSIFIER = ClassifierConfig()


def _classify_arrays(sigmas, grad, kernels, d, ccfg: ClassifierConfig):
    sigma1_ref = ccfg.sigma1_ref
    if sigma1_ref is None:
        sigma1_ref = float(np.median(sigmas[:, 0])) if sigmas.shape[0] else 1.0
    eps_umb = ccfg.eps_umb_rel * sigma1_ref
    gnorm = np.linalg.norm(grad, axis=-1)
    dk = np.abs(np.einsum("kd,kd->k", grad, kernels))
    labels = np.full(sigmas.shape[0], LABEL_FOLD, dtype=object)
    cusp = dk <= ccfg.eps_cusp * gnorm
    labels[cusp] = LABEL_CUSP
    umb = sigmas[:, d - 2] <= eps_umb
    labels[umb] = LABEL_UMBILIC
    return labels, dk, eps_umb


def classify_vertices(ems: EndpointMapSpec, V, ccfg: ClassifierConfig = DEFAULT_CLASSIFIER):
    """Classification data at a batch of chart points.

    Returns a dict with det, grad, sigmas, kernels, labels, ok and the
    kernel-directional derivative dk.
    """
    V = np.asarray(V, dtype=float)
    det, grad, Jc, qn, ok = grad_chart_det_batch(ems, V)
    d = ems.dim
    Jsafe = np.where(np.isfinite(Jc), Jc, 0.0)
    _, S, Vt = np.linalg.svd(Jsafe)
    kernels = Vt[:, -1, :]
    labels, dk, eps_umb = _classify_arrays(S, np.where(ok[:, None], grad, 0.0), kernels, d, ccfg)
    return {
        "det": det,
        "grad": grad,
        "sigmas": S,
        "kernels": kernels,
        "labels": labels,
        "dk": dk,
        "ok": ok,
        "qn": qn,
        "eps_umb": eps_umb,
    }


def classify_singular_point(ems: EndpointMapSpec, v, ccfg: ClassifierConfig = DEFAULT_CLASSIFIER) -> str:
    """Label one near-singular chart point as fold / cusp / umbilicCandidate."""
    out = classify_vertices(ems, np.asarray(v, dtype=float)[None, :], _with_local_ref(ccfg, ems, v))
    if not out["ok"][0]:
        raise EvaluationFailed("classification point could not be evaluated")
    return str(out["labels"][0])


def _with_local_ref(ccfg, ems, v):
    if ccfg.sigma1_ref is not None:
        return ccfg
    _, J, _, ok = chart_det_batch(ems, np.asarray(v, dtype=float)[None, :])
    ref = float(np.linalg.svd(J[0], compute_uv=False)[0]) if ok[0] else 1.0
    return replace(ccfg, sigma1_ref=ref)


def classify_map_point(f, v, d: int, ccfg: ClassifierConfig = DEFAULT_CLASSIFIER) -> str:
    """Classify a singular point of a generic dual-capable map f: R^d -> R^d.

    Used to validate the Whitney normal-form behaviour of the classifier.
    """
    v = np.asarray(v, dtype=float)

    def det_fn(x):
        J = jacobian(f, x)
        det = _det_small(J, d)
        if isinstance(det, Dual):
            return Dual(det.val.reshape(1), det.der.reshape(1, -1))
        return np.asarray(det).reshape(1)

    J = jacobian(f, v)
    _, S, Vt = np.linalg.svd(J)
    kernel = Vt[-1, :]
    grad = jacobian(det_fn, v)[0]
    ccfg_local = ccfg if ccfg.sigma1_ref is not None else replace(ccfg, sigma1_ref=float(S[0]))
    labels, _, _ = _classify_arrays(S[None, :], grad[None, :], kernel[None, :], d, ccfg_local)
    return str(labels[0])


# ---------------------------------------------------------------------------
# cusp refinement and umbilic detection
# ---------------------------------------------------------------------------

@dataclass
class CuspResult:
    points: np.ndarray  # (C, d) chart coordinates
    refined: np.ndarray  # (C,) bool
    degenerate: bool = False
    polylines: List[np.ndarray] = field(default_factory=list)  # d = 3: vertex-id chains
    n_seeds: int = 0


def refine_cusps(
    ems: EndpointMapSpec,
    crit: CriticalSet,
    labels,
    ccfg: ClassifierConfig = DEFAULT_CLASSIFIER,
    max_iter: int = 30,
) -> CuspResult:
    """Sharpen cusp locations: 2-D Newton on (det, D_k det) = (0, 0).

    When the cusp-classified fraction of the critical set exceeds the
    degeneracy threshold (non-generic geometry: the whole set is cusp-like,
    as on a round sphere) no isolated cusps are reported.
    """
    d = ems.dim
    ids = np.flatnonzero(np.asarray(labels, dtype=object) == LABEL_CUSP)
    n_seeds = ids.size
    if crit.n_vertices == 0 or n_seeds == 0:
        return CuspResult(points=np.zeros((0, d)), refined=np.zeros(0, dtype=bool), n_seeds=0)
    if n_seeds > ccfg.degenerate_fraction * crit.n_vertices:
        return CuspResult(
            points=np.zeros((0, d)), refined=np.zeros(0, dtype=bool), degenerate=True, n_seeds=n_seeds
        )
    if d == 3:
        cusp_set = set(ids.tolist())
        segs = []
        for tri in crit.triangles:
            for a, b in ((0, 1), (1, 2), (0, 2)):
                va, vb = int(tri[a]), int(tri[b])
                if va in cusp_set and vb in cusp_set and va != vb:
                    segs.append((min(va, vb), max(va, vb)))
        segs = sorted(set(segs))
        polylines = _assemble_paths(crit.n_vertices, segs)
        return CuspResult(
            points=crit.vertices[ids],
            refined=np.zeros(n_seeds, dtype=bool),
            polylines=polylines,
            n_seeds=n_seeds,
        )
    if d != 2:
        raise InvalidDimension("cusp refinement implemented for chart dimension 2 and 3")

    cell = float(np.max(crit.cell_sizes))
    V, conv, alive = _cusp_newton(
        lambda P: classify_vertices(ems, P, ccfg),
        crit.vertices[ids],
        cell,
        crit.eps_onset,
        max_iter,
    )
    points, refined = _cluster_cusps(V, conv, alive, crit, ids)
    return CuspResult(points=points, refined=refined, n_seeds=n_seeds)


def _cusp_newton(classify_fn, seeds, cell, eps_det, max_iter=30):
    """Newton on (det, D_k det) = (0, 0) from a batch of seed points (d = 2).

    ``classify_fn(P)`` must return a dict with det, grad, kernels and ok.
    Kernels at the finite-difference stencil points are sign-aligned with
    the centre so the kernel rotation enters the Jacobian (that term is
    what makes the system square at a cusp).
    """
    h = cell / 64.0
    V = np.array(seeds, dtype=float)
    alive = np.ones(V.shape[0], dtype=bool)
    conv = np.zeros(V.shape[0], dtype=bool)

    def F_of(P):
        out = classify_fn(P)
        k = out["kernels"]
        gn = np.linalg.norm(out["grad"], axis=-1)
        F = np.stack([out["det"], np.einsum("kd,kd->k", out["grad"], k)], axis=-1)
        return F, out["ok"], k, gn

    for _ in range(max_iter):
        act = np.flatnonzero(alive & ~conv)
        if act.size == 0:
            break
        F, okF, kdir, gn = F_of(V[act])
        alive[act[~okF]] = False
        good = act[okF]
        if good.size == 0:
            continue
        gsel = np.flatnonzero(okF)
        gscale = np.maximum(gn[gsel], 1e-300)
        newly = (np.abs(F[gsel, 0]) <= eps_det) & (np.abs(F[gsel, 1]) <= 1e-8 * gscale)
        conv[good[newly]] = True
        work = good[~newly]
        if work.size == 0:
            continue
        wsel = gsel[~newly]
        kf = kdir[wsel]
        Jmat = np.empty((work.size, 2, 2))
        for j in range(2):
            dp = np.zeros((work.size, 2))
            dp[:, j] = h
            out_p = classify_fn(V[work] + dp)
            out_m = classify_fn(V[work] - dp)
            kp = _align(out_p["kernels"], kf)
            km = _align(out_m["kernels"], kf)
            Fp = np.stack([out_p["det"], np.einsum("kd,kd->k", out_p["grad"], kp)], axis=-1)
            Fm = np.stack([out_m["det"], np.einsum("kd,kd->k", out_m["grad"], km)], axis=-1)
            okj = out_p["ok"] & out_m["ok"]
            Jmat[:, :, j] = np.where(okj[:, None], (Fp - Fm) / (2 * h), np.nan)
        good_j = np.all(np.isfinite(Jmat), axis=(1, 2))
        alive[work[~good_j]] = False
        work = work[good_j]
        if work.size == 0:
            continue
        try:
            step = np.linalg.solve(Jmat[good_j], F[wsel][good_j][:, :, None])[..., 0]
        except np.linalg.LinAlgError:
            alive[work] = False
            continue
        norm = np.linalg.norm(step, axis=-1)
        cap = 2.0 * cell
        scale = np.where(norm > cap, cap / np.maximum(norm, 1e-300), 1.0)
        V[work] -= step * scale[:, None]
    return V, conv, alive


def classify_batch_of_map(f, V, d: int):
    """classify_vertices-style data for a generic dual-capable map f: R^d -> R^d."""
    V = np.asarray(V, dtype=float)
    dets = np.empty(V.shape[0])
    grads = np.empty((V.shape[0], d))
    kernels = np.empty((V.shape[0], d))
    sigmas = np.empty((V.shape[0], d))
    ok = np.ones(V.shape[0], dtype=bool)
    for i, v in enumerate(V):
        try:
            J = jacobian(f, v)
            _, S, Vt = np.linalg.svd(J)
            Jd = jacobian(lambda x: _scalar1(_det_small(jacobian(f, x), d)), v)
            dets[i] = float(value(_det_small(J, d)))
            grads[i] = Jd[0]
            kernels[i] = Vt[-1, :]
            sigmas[i] = S
        except EvaluationFailed:
            ok[i] = False
            dets[i] = np.nan
    return {"det": dets, "grad": grads, "kernels": kernels, "sigmas": sigmas, "ok": ok}


def _scalar1(x):
    if isinstance(x, Dual):
        return Dual(x.val.reshape(1), x.der.reshape(1, -1))
    return np.asarray(value(x)).reshape(1)


def refine_cusps_of_map(f, seeds, d: int, cell: float, eps_det: float = 1e-10, max_iter: int = 30):
    """Newton cusp refinement for a generic dual-capable map (validation path)."""
    V, conv, alive = _cusp_newton(
        lambda P: classify_batch_of_map(f, P, d), np.atleast_2d(seeds), cell, eps_det, max_iter
    )
    return V, conv


def _align(kernels, ref):
    """Flip singular-vector signs so each row has positive overlap with ref."""
    flip = np.einsum("kd,kd->k", kernels, ref) < 0
    out = kernels.copy()
    out[flip] *= -1.0
    return out


def _cluster_cusps(V, conv, alive, crit, ids):
    """Deterministic clustering: converged points anchor, stragglers attach."""
    radius = 2.0 * float(np.max(crit.cell_sizes))
    order = np.lexsort((V[:, 1] if V.shape[1] > 1 else V[:, 0], V[:, 0], ~conv))
    reps: List[np.ndarray] = []
    rep_refined: List[bool] = []
    for i in order:
        if not (conv[i] or alive[i]):
            # diverged: fall back to the original mesh vertex position
            p = crit.vertices[ids[i]]
            was_refined = False
        else:
            p = V[i]
            was_refined = bool(conv[i])
        assigned = False
        for r, rp in enumerate(reps):
            if np.linalg.norm(p - rp) <= radius:
                rep_refined[r] = rep_refined[r] or was_refined
                assigned = True
                break
        if not assigned:
            reps.append(p)
            rep_refined.append(was_refined)
    if not reps:
        return np.zeros((0, V.shape[1])), np.zeros(0, dtype=bool)
    return np.asarray(reps), np.asarray(rep_refined, dtype=bool)


@dataclass
class UmbilicResult:
    points: np.ndarray  # (U, d) confirmed corank-2 points (refined)
    sigma_pairs: np.ndarray  # (U, 2) refined (sigma_{d-1}, sigma_d)
    min_sigma2: float  # smallest sigma_{d-1} reachable over the region
    eps_umb: float
    candidates: int = 0  # mesh-level clusters before confirmation


def _nelder_mead(f, x0, scale, max_iter=250, ftol=1e-30, xtol=1e-13):
    """Tiny deterministic Nelder-Mead (enough for the 3-variable corank search)."""
    n = x0.size
    pts = [np.array(x0, dtype=float)]
    for i in range(n):
        p = np.array(x0, dtype=float)
        p[i] += scale
        pts.append(p)
    vals = [f(p) for p in pts]
    for _ in range(max_iter):
        order = np.argsort(vals, kind="stable")
        pts = [pts[i] for i in order]
        vals = [vals[i] for i in order]
        if vals[-1] - vals[0] < ftol or max(np.max(np.abs(p - pts[0])) for p in pts[1:]) < xtol:
            break
        centroid = np.mean(pts[:-1], axis=0)
        xr = centroid + (centroid - pts[-1])
        fr = f(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - pts[-1])
            fe = f(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
        elif fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (pts[-1] - centroid)
            fc = f(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                    vals[i] = f(pts[i])
    best = int(np.argmin(vals))
    return pts[best], vals[best]


def _corank2_residual(ems, v):
    """sigma_{d-1}^2 + sigma_d^2 of the chart Jacobian (zero exactly at corank 2)."""
    det, J, qn, ok = chart_det_batch(ems, np.asarray(v, dtype=float)[None, :])
    if not ok[0]:
        return np.inf, np.array([np.inf, np.inf])
    S = np.linalg.svd(J[0], compute_uv=False)
    return float(S[-2] ** 2 + S[-1] ** 2), S


def detect_umbilics(
    ems: EndpointMapSpec,
    crit: CriticalSet,
    sigmas: np.ndarray,
    ccfg: ClassifierConfig = DEFAULT_CLASSIFIER,
    refine: bool = True,
) -> UmbilicResult:
    """Corank-2 detection on the critical set.

    Mesh vertices with sigma_{d-1} below the candidate threshold are
    clustered; each cluster minimiser is then polished by minimising
    sigma_{d-1}^2 + sigma_d^2 over the chart, and confirmed as an umbilic
    only if the refined sigma_{d-1} drops below the confirmation threshold.
    ``min_sigma2`` reports the smallest refined value over all clusters
    (the structural floor a broken bifurcation cannot go below), falling
    back to the mesh minimum when there are no candidate clusters.
    """
    d = ems.dim
    if d != 3:
        raise InvalidDimension("umbilic detection requires a 3-dimensional chart")
    sigma1_ref = ccfg.sigma1_ref
    if sigma1_ref is None:
        sigma1_ref = float(np.median(sigmas[:, 0])) if sigmas.shape[0] else 1.0
    eps_umb = ccfg.eps_umb_rel * sigma1_ref
    eps_gate = ccfg.eps_umb_gate_rel * sigma1_ref  # cluster-seeding gate (wider than the label test)
    eps_confirm = ccfg.eps_umb_confirm_rel * sigma1_ref
    if crit.n_vertices == 0:
        return UmbilicResult(np.zeros((0, d)), np.zeros((0, 2)), np.inf, eps_umb)
    s2 = sigmas[:, d - 2]
    mesh_min = float(np.min(s2))
    ids = np.flatnonzero(s2 <= eps_gate)
    if ids.size == 0:
        return UmbilicResult(np.zeros((0, d)), np.zeros((0, 2)), mesh_min, eps_umb)
    radius = 2.0 * float(np.max(crit.cell_sizes))
    order = ids[np.argsort(s2[ids], kind="stable")]
    reps = []
    for i in order:
        p = crit.vertices[i]
        if all(np.linalg.norm(p - crit.vertices[r]) > radius for r in reps):
            reps.append(i)
    reps = np.asarray(reps, dtype=np.int64)
    if not refine:
        return UmbilicResult(
            points=crit.vertices[reps],
            sigma_pairs=sigmas[reps][:, [d - 2, d - 1]],
            min_sigma2=mesh_min,
            eps_umb=eps_umb,
            candidates=reps.size,
        )
    cell = float(np.max(crit.cell_sizes))
    points, pairs, refined_minima = [], [], []
    for i in reps:
        x0 = crit.vertices[i]
        x_best, _ = _nelder_mead(lambda v: _corank2_residual(ems, v)[0], x0, scale=0.5 * cell)
        _, S = _corank2_residual(ems, x_best)
        if not np.all(np.isfinite(S)) or np.linalg.norm(x_best - x0) > 6.0 * cell:
            refined_minima.append(s2[i])  # polish escaped the cluster: keep mesh value
            continue
        refined_minima.append(float(S[-2]))
        if S[-2] <= eps_confirm:
            if all(np.linalg.norm(x_best - p) > radius for p in points):
                points.append(x_best)
                pairs.append([S[-2], S[-1]])
    min_sigma2 = float(np.min(refined_minima)) if refined_minima else mesh_min
    return UmbilicResult(
        points=np.asarray(points).reshape(-1, d),
        sigma_pairs=np.asarray(pairs).reshape(-1, 2),
        min_sigma2=min_sigma2,
        eps_umb=eps_umb,
        candidates=reps.size,
    )


# ---------------------------------------------------------------------------
# full diagram
# ---------------------------------------------------------------------------

@dataclass
class LocusDiagram:
    """Critical set, its image, and classified singular points."""

    ems: EndpointMapSpec
    scan: MeshScan
    critical: CriticalSet
    locus_vertices: np.ndarray  # (K, n), vertex-aligned with critical.vertices
    labels: np.ndarray  # (K,) fold / cusp / umbilicCandidate
    sigmas: np.ndarray  # (K, d)
    cusps: CuspResult
    umbilics: Optional[UmbilicResult]
    n_scan_failures: int
    n_map_dropped: int


def compute_locus_diagram(
    ems: EndpointMapSpec,
    box,
    res,
    ccfg: ClassifierConfig = DEFAULT_CLASSIFIER,
    refine: bool = True,
) -> LocusDiagram:
    """Run the full pipeline: scan, extract, map, classify, refine."""
    scan = scan_mesh(ems, box, res)
    crit = extract_critical_set(ems, scan, refine=refine)
    locus_vertices, kept, n_dropped = map_locus(ems, crit)
    crit = filter_critical_set(crit, kept)
    if crit.n_vertices:
        out = classify_vertices(ems, crit.vertices, ccfg)
        labels, sigmas = out["labels"], out["sigmas"]
        bad = ~out["ok"]
        labels[bad] = LABEL_FOLD
        ccfg_used = (
            ccfg
            if ccfg.sigma1_ref is not None
            else replace(ccfg, sigma1_ref=float(np.median(sigmas[:, 0])))
        )
    else:
        labels = np.zeros(0, dtype=object)
        sigmas = np.zeros((0, ems.dim))
        ccfg_used = ccfg
    cusps = refine_cusps(ems, crit, labels, ccfg_used)
    umbilics = detect_umbilics(ems, crit, sigmas, ccfg_used) if ems.dim == 3 else None
    return LocusDiagram(
        ems=ems,
        scan=scan,
        critical=crit,
        locus_vertices=locus_vertices,
        labels=labels,
        sigmas=sigmas,
        cusps=cusps,
        umbilics=umbilics,
        n_scan_failures=scan.n_failures,
        n_map_dropped=n_dropped,
    )
