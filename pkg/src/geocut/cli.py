"""Command-line interface.

Commands: geodesic, connect, locus, classify, compare, convergence.
Exit codes: 0 success, 2 numerical failure, 64 usage error.

Every emitted JSON document is self-describing: the ``meta`` block embeds
scheme, axes, base point, step count, mesh, box, tolerances and RNG seed,
and identical configurations produce byte-identical files regardless of
the worker thread count.

Locus JSON schema (d = chart dimension, n = ambient dimension):

    {
      "meta":         {scheme, axes, q0, N, mesh, box, tolerances, seed,
                       out_chart: {dropped_axis, orientation_sign}},
      "critical_set": [[v_1..v_d], ...]     # vertices, row-major cell order
      "locus":        [[x_1..x_n], ...]     # phi(vertex), vertex-aligned
      "cusps":        [[v_1..v_d], ...]     # refined cusp points
      "umbilics":     [[v_1..v_d], ...]     # umbilic candidates (d = 3)
      "failures":     int                   # failed mesh nodes + dropped vertices
      # connectivity / diagnostics extensions:
      "critical_set_paths":     [[vertex ids], ...]   (d = 2)
      "critical_set_triangles": [[i, j, k], ...]      (d = 3)
      "labels":       ["fold" | "cusp" | "umbilicCandidate", ...]
      "cusps_refined": [bool, ...],
      "degenerate_cusps": bool,
      "umbilic_sigma_pairs": [[sigma_{d-1}, sigma_d], ...],
      "min_sigma2":   float | null
    }
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from ._engine import SolverConfig
from ._jsonio import csv_bytes, dump_bytes
from .bvp import BvpProblem, count_solutions
from .constraints import ConstraintSpec, Ellipsoid, OutputChart, TangentChart, plane_constraint
from .errors import GeocutError, NewtonDiverged
from .integrators import integrate, kkt_solve
from .locus import (
    ClassifierConfig,
    EndpointMapSpec,
    auto_output_chart,
    compute_locus_diagram,
)

EXIT_OK = 0
EXIT_NUMERIC = 2
EXIT_USAGE = 64

DEFAULT_AXES = "1.0,0.9,0.8"
DEFAULT_Q0_DIRECTION = np.array([0.45, 0.7, 0.55])


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in text.split(",") if t != ""])
    except ValueError as exc:
        raise UsageError(f"expected comma-separated floats, got {text!r}") from exc
    if vals.size == 0 or not np.all(np.isfinite(vals)):
        raise UsageError(f"expected finite comma-separated floats, got {text!r}")
    return vals


def _parse_box(text: str, d: int) -> np.ndarray:
    try:
        ranges = []
        for part in text.split(","):
            lo, hi = part.split(":")
            ranges.append((float(lo), float(hi)))
    except ValueError as exc:
        raise UsageError(f"malformed --box {text!r}, expected lo:hi[,lo:hi...]") from exc
    if len(ranges) == 1:
        ranges = ranges * d
    if len(ranges) != d:
        raise UsageError(f"--box needs 1 or {d} ranges, got {len(ranges)}")
    box = np.asarray(ranges, dtype=float)
    if np.any(box[:, 1] <= box[:, 0]):
        raise UsageError("--box ranges must satisfy lo < hi")
    return box


def _parse_mesh(text: str, d: int) -> tuple:
    vals = [int(t) for t in text.split(",")]
    if any(v < 2 for v in vals):
        raise UsageError("--mesh resolutions must be >= 2")
    if len(vals) == 1:
        return (vals[0],) * d
    if len(vals) != d:
        raise UsageError(f"--mesh needs 1 or {d} values")
    return tuple(vals)


@dataclass
class RunConfig:
    """Validated run parameters; the serialized form is the JSON meta block."""

    command: str
    scheme: str
    axes: Optional[np.ndarray]
    q0: np.ndarray
    N: int
    cfg: SolverConfig
    ccfg: ClassifierConfig = field(default_factory=ClassifierConfig)
    mesh: Optional[tuple] = None
    box: Optional[np.ndarray] = None
    seed: int = 0
    threads: int = 1
    out_chart: Optional[OutputChart] = None

    def meta(self) -> dict:
        m = {
            "scheme": self.scheme,
            "axes": None if self.axes is None else list(self.axes),
            "q0": list(self.q0),
            "N": self.N,
            "mesh": None if self.mesh is None else list(self.mesh),
            "box": None if self.box is None else [list(r) for r in self.box],
            "tolerances": {
                "tol": self.cfg.tol,
                "max_iter": self.cfg.max_iter,
                "damping": self.cfg.damping,
                "eps_cusp": self.ccfg.eps_cusp,
                "eps_umb_rel": self.ccfg.eps_umb_rel,
            },
            "seed": self.seed,
        }
        if self.out_chart is not None:
            m["out_chart"] = {
                "dropped_axis": list(self.out_chart.dropped_axis),
                "orientation_sign": self.out_chart.orientation_sign,
            }
        return m


def _spec_from_args(args) -> tuple:
    """(spec, axes array or None) from --ellipsoid / --plane."""
    if getattr(args, "plane", None):
        return plane_constraint(int(args.plane)), None
    axes = _floats(args.ellipsoid)
    if np.any(axes <= 0):
        raise UsageError("--ellipsoid semi-axes must be strictly positive")
    return Ellipsoid(axes).constraint(), axes


def _q0_from_args(args, spec: ConstraintSpec, axes) -> np.ndarray:
    if args.q0 == "auto":
        if axes is None:
            raise UsageError("--q0 auto requires --ellipsoid")
        u = DEFAULT_Q0_DIRECTION
        if axes.size != 3:
            rng = np.random.default_rng(12345)
            u = rng.normal(size=axes.size)
        return Ellipsoid(axes).surface_point(u)
    q0 = _floats(args.q0)
    if q0.size != spec.n:
        raise UsageError(f"--q0 needs {spec.n} components")
    g = float(np.max(np.abs(np.asarray(spec.g(q0)))))
    if g > 1e-8:
        raise UsageError(f"--q0 is off the constraint manifold (|g| = {g:.2e})")
    return q0


def _solver_cfg(args) -> SolverConfig:
    if args.tol <= 0 or args.max_iter < 1:
        raise UsageError("--tol must be > 0 and --max-iter >= 1")
    return SolverConfig(tol=args.tol, max_iter=args.max_iter)


def _write(payload: bytes, out: Optional[str]):
    if out is None or out == "-":
        sys.stdout.buffer.write(payload)
    else:
        with open(out, "wb") as fh:
            fh.write(payload)


def _add_common(p, default_steps=50):
    p.add_argument("--ellipsoid", default=DEFAULT_AXES, help="comma-separated semi-axes")
    p.add_argument("--plane", type=int, default=None, help="use the plane constraint in R^n")
    p.add_argument("--q0", default="auto")
    p.add_argument("--steps", type=int, default=default_steps)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def _build_parser() -> _Parser:
    ap = _Parser(prog="geocut", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", help="integrate one trajectory")
    _add_common(g, default_steps=100)
    g.add_argument("--scheme", choices=("del", "sympeuler", "rk2", "kkt"), default="del")
    g.add_argument("--p0", default=None, help="initial momentum (initial-value schemes)")
    g.add_argument("--qN", default=None, help="target endpoint (kkt direct method)")
    g.add_argument("--format", choices=("csv", "json"), default="csv")

    c = sub.add_parser("connect", help="multistart geodesic search between two points")
    _add_common(c)
    c.add_argument("--from", dest="q_from", required=True)
    c.add_argument("--to", dest="q_to", required=True)
    c.add_argument("--bound", type=float, default=3 * np.pi / 2)
    c.add_argument("--seeds", type=int, default=64)
    c.add_argument("--speeds", type=int, default=None)

    for name in ("locus", "compare"):
        p = sub.add_parser(name, help=f"{name} pipeline")
        _add_common(p)
        p.add_argument("--scheme", choices=("del", "sympeuler", "rk2"), default="del")
        p.add_argument("--mesh", default="96")
        p.add_argument("--box", default="-3.38:3.38")
        p.add_argument("--eps-cusp", type=float, default=0.05)
        p.add_argument("--eps-umb-rel", type=float, default=1e-3)
        if name == "compare":
            p.add_argument("--schemes", default="del,rk2")

    cl = sub.add_parser("classify", help="reclassify the critical set of a saved diagram")
    cl.add_argument("--in", dest="infile", required=True)
    cl.add_argument("--out", default=None)

    v = sub.add_parser("convergence", help="empirical order table")
    _add_common(v)
    v.add_argument("--schemes", default="del,rk2")
    v.add_argument("--steps-list", default="25,50,100,200")
    return ap


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_geodesic(args) -> int:
    spec, axes = _spec_from_args(args)
    q0 = _q0_from_args(args, spec, axes)
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    cfg = _solver_cfg(args)
    rc = RunConfig("geodesic", args.scheme, axes, q0, args.steps, cfg, seed=args.seed, threads=args.threads)
    if args.scheme == "kkt":
        if args.qN is None:
            raise UsageError("--scheme kkt requires --qN")
        qN = _floats(args.qN)
        traj = kkt_solve(spec, q0, qN, args.steps, cfg)
    else:
        if args.p0 is None:
            raise UsageError("initial-value schemes require --p0")
        p0 = _floats(args.p0)
        if p0.size != spec.n:
            raise UsageError(f"--p0 needs {spec.n} components")
        traj = integrate(args.scheme, spec, q0, p0, args.steps, cfg, momenta=True)
    if args.format == "json":
        payload = dump_bytes(
            {
                "meta": rc.meta(),
                "dt": traj.dt,
                "qs": traj.qs,
                "lambdas": traj.lambdas,
                "ps": traj.ps,
            }
        )
    else:
        n, m = spec.n, spec.m
        header = ["t"] + [f"q{i+1}" for i in range(n)] + [f"lambda{i+1}" for i in range(m)]
        lam_rows = _lambda_rows(traj, args.scheme)
        rows = []
        for k, t in enumerate(traj.times):
            rows.append([t] + list(traj.qs[k]) + list(lam_rows[k]))
        payload = csv_bytes(header, rows)
    _write(payload, args.out)
    return EXIT_OK


def _lambda_rows(traj, scheme):
    """Align per-step multipliers with position rows (nan where undefined)."""
    K = traj.qs.shape[0]
    m = traj.lambdas.shape[1] if traj.lambdas.size else 1
    rows = np.full((K, m), np.nan)
    lam = traj.lambdas
    if scheme in ("del", "kkt"):
        rows[1 : 1 + lam.shape[0]] = lam  # lambda_k at interior q_k
    elif scheme == "sympeuler":
        rows[1 : 1 + lam.shape[0]] = lam  # lambda_{k+1} produced by step k
    else:  # rk2: lambda_k used at q_k
        rows[0 : lam.shape[0]] = lam
    return rows


def _cmd_connect(args) -> int:
    spec, axes = _spec_from_args(args)
    cfg = _solver_cfg(args)
    q_from = _floats(args.q_from)
    q_to = _floats(args.q_to)
    if args.bound <= 0:
        raise UsageError("--bound must be positive")
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    prob = BvpProblem(spec, q_from, q_to, args.steps, cfg)
    rc = RunConfig("connect", "del", axes, q_from, args.steps, cfg, seed=args.seed, threads=args.threads)
    result = count_solutions(prob, args.bound, grid=args.seeds, n_speeds=args.speeds, seed=args.seed)
    payload = dump_bytes(
        {
            "meta": {**rc.meta(), "to": list(q_to), "bound": args.bound, "seeds": args.seeds},
            "solutions": [
                {
                    "length": s.length,
                    "q1": s.q1,
                    "lambda_last": s.lambda_last,
                    "chart_coords": s.seed_chart_coords,
                    "residual": s.residual,
                }
                for s in result.solutions
            ],
            "diagnostics": {
                "n_seeds": result.n_seeds,
                "n_converged": result.n_converged,
                "n_failed": result.n_failed,
                "n_rejected": result.n_rejected,
                "failed_fraction": result.failed_fraction,
            },
        }
    )
    _write(payload, args.out)
    return EXIT_OK


def _locus_setup(args, scheme):
    spec, axes = _spec_from_args(args)
    q0 = _q0_from_args(args, spec, axes)
    cfg = _solver_cfg(args)
    chart = TangentChart.at(spec, q0)
    d = chart.dim
    box = _parse_box(args.box, d)
    mesh = _parse_mesh(args.mesh, d)
    ref = -q0 if spec.quadric is not None else q0
    oc = auto_output_chart(spec, ref)
    ccfg = ClassifierConfig(eps_cusp=args.eps_cusp, eps_umb_rel=args.eps_umb_rel)
    ems = EndpointMapSpec(scheme, spec, chart, oc, args.steps, cfg)
    rc = RunConfig(
        "locus", scheme, axes, q0, args.steps, cfg, ccfg,
        mesh=mesh, box=box, seed=args.seed, threads=args.threads, out_chart=oc,
    )
    return ems, rc


def _images_of(diag, points) -> list:
    from .locus import endpoint_map_batch

    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return []
    qn, _, fail = endpoint_map_batch(diag.ems, points, tangents=False)
    return [qn[i] if fail[i] == 0 else None for i in range(points.shape[0])]


def _diagram_payload(diag, rc: RunConfig) -> dict:
    d = diag.ems.dim
    umb_pts = diag.umbilics.points if diag.umbilics is not None else np.zeros((0, d))
    doc = {
        "meta": rc.meta(),
        "critical_set": diag.critical.vertices,
        "locus": diag.locus_vertices,
        "cusps": diag.cusps.points,
        "umbilics": umb_pts,
        "cusps_locus": _images_of(diag, diag.cusps.points),
        "umbilics_locus": _images_of(diag, umb_pts),
        "failures": diag.n_scan_failures + diag.n_map_dropped,
        "labels": list(diag.labels),
        "cusps_refined": [bool(b) for b in diag.cusps.refined],
        "degenerate_cusps": diag.cusps.degenerate,
        "min_sigma2": diag.umbilics.min_sigma2 if diag.umbilics is not None else None,
        "umbilic_sigma_pairs": diag.umbilics.sigma_pairs if diag.umbilics is not None else [],
    }
    if d == 2:
        doc["critical_set_paths"] = [p.tolist() for p in diag.critical.paths]
        doc["cusp_polylines"] = []
    else:
        doc["critical_set_triangles"] = diag.critical.triangles
        doc["cusp_polylines"] = [p.tolist() for p in diag.cusps.polylines]
    return doc


def _cmd_locus(args) -> int:
    backend.set_threads(args.threads)
    ems, rc = _locus_setup(args, args.scheme)
    diag = compute_locus_diagram(ems, rc.box, rc.mesh, rc.ccfg)
    n_nodes = int(np.prod(rc.mesh))
    payload = dump_bytes(_diagram_payload(diag, rc))
    _write(payload, args.out)
    if diag.n_scan_failures > 0.10 * n_nodes:
        print(
            f"error: {diag.n_scan_failures}/{n_nodes} mesh nodes failed (> 10%)",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_compare(args) -> int:
    backend.set_threads(args.threads)
    schemes = tuple(s.strip() for s in args.schemes.split(","))
    if len(schemes) != 2:
        raise UsageError("--schemes needs exactly two scheme names")
    docs = {}
    diags = {}
    worst = 0
    n_nodes = None
    for sch in schemes:
        ems, rc = _locus_setup(args, sch)
        diag = compute_locus_diagram(ems, rc.box, rc.mesh, rc.ccfg)
        key = sch if sch not in docs else f"{sch}_2"
        docs[key] = _diagram_payload(diag, rc)
        diags[key] = diag
        n_nodes = int(np.prod(rc.mesh))
        worst = max(worst, diag.n_scan_failures)
    a, b = list(diags)
    da, db = diags[a], diags[b]
    both_ok = da.scan.ok & db.scan.ok
    det_diff = float(np.max(np.abs(da.scan.det[both_ok] - db.scan.det[both_ok]))) if np.any(both_ok) else 0.0
    diff = {
        "schemes": list(docs),
        "umbilic_count": {k: (len(v["umbilics"]) if not isinstance(v["umbilics"], list) else len(v["umbilics"])) for k, v in docs.items()},
        "min_sigma2": {k: v["min_sigma2"] for k, v in docs.items()},
        "cusp_count": {k: len(v["cusps"]) for k, v in docs.items()},
        "det_max_abs_diff": det_diff,
    }
    ua, ub = diff["min_sigma2"][a], diff["min_sigma2"][b]
    if ua is not None and ub is not None and ua > 0:
        diff["sigma2_ratio"] = ub / ua
    payload = dump_bytes({a: docs[a], b: docs[b], "diff": diff})
    _write(payload, args.out)
    if n_nodes and worst > 0.10 * n_nodes:
        print(f"error: {worst}/{n_nodes} mesh nodes failed (> 10%)", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_classify(args) -> int:
    import json

    with open(args.infile, "rb") as fh:
        doc = json.loads(fh.read().decode("utf-8"))
    meta = doc["meta"]
    axes = np.asarray(meta["axes"], dtype=float)
    spec = Ellipsoid(axes).constraint()
    q0 = np.asarray(meta["q0"], dtype=float)
    chart = TangentChart.at(spec, q0)
    oc = OutputChart(
        dropped_axis=tuple(meta["out_chart"]["dropped_axis"]),
        orientation_sign=float(meta["out_chart"]["orientation_sign"]),
    )
    cfg = SolverConfig(tol=meta["tolerances"]["tol"], max_iter=int(meta["tolerances"]["max_iter"]))
    ccfg = ClassifierConfig(
        eps_cusp=meta["tolerances"]["eps_cusp"], eps_umb_rel=meta["tolerances"]["eps_umb_rel"]
    )
    ems = EndpointMapSpec(meta["scheme"], spec, chart, oc, int(meta["N"]), cfg)
    V = np.asarray(doc["critical_set"], dtype=float)
    from .locus import classify_vertices

    if V.size == 0:
        out = {"meta": meta, "points": [], "labels": [], "sigmas": []}
    else:
        res = classify_vertices(ems, V, ccfg)
        out = {
            "meta": meta,
            "points": V,
            "labels": list(res["labels"]),
            "sigmas": res["sigmas"],
            "det": res["det"],
        }
    _write(dump_bytes(out), args.out)
    return EXIT_OK


def _cmd_convergence(args) -> int:
    spec, axes = _spec_from_args(args)
    cfg = _solver_cfg(args)
    schemes = [s.strip() for s in args.schemes.split(",")]
    Ns = [int(t) for t in args.steps_list.split(",")]
    if any(N < 1 for N in Ns):
        raise UsageError("--steps-list entries must be >= 1")
    if getattr(args, "plane", None):
        q0 = np.zeros(spec.n)
        p0 = np.zeros(spec.n)
        p0[0] = 1.0
        exact = q0 + p0
    else:
        if axes is None or np.ptp(axes) > 1e-12:
            raise UsageError("convergence oracle requires a sphere (--ellipsoid r,r,r) or --plane")
        r = float(axes[0])
        q0 = np.array([r] + [0.0] * (spec.n - 1))
        p0 = np.zeros(spec.n)
        p0[1] = np.pi * r
        exact = -q0
    rows = []
    for sch in schemes:
        errs = []
        for N in Ns:
            traj = integrate(sch, spec, q0, p0, N, cfg)
            err = float(np.linalg.norm(traj.qs[-1] - exact))
            errs.append(err)
            order = "" if len(errs) < 2 else _order(errs[-2], errs[-1], Ns[len(errs) - 2], N)
            rows.append([sch, N, err, order])
    payload = csv_bytes(["scheme", "N", "endpoint_error", "order"], rows)
    _write(payload, args.out)
    return EXIT_OK


def _order(e_prev, e_cur, n_prev, n_cur):
    if e_prev <= 0 or e_cur <= 0:
        return ""
    return float(np.log(e_prev / e_cur) / np.log(n_cur / n_prev))


_COMMANDS = {
    "geodesic": _cmd_geodesic,
    "connect": _cmd_connect,
    "locus": _cmd_locus,
    "compare": _cmd_compare,
    "classify": _cmd_classify,
    "convergence": _cmd_convergence,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NewtonDiverged as exc:
        step = f" at step {exc.step}" if exc.step is not None else ""
        print(f"numerical failure{step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GeocutError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
