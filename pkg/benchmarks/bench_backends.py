#!/usr/bin/env python3
"""Compare the compiled (numba) and pure-numpy endpoint-map kernels.

Runs the same mesh batches through both backends and reports wall time and
the worst value/tangent disagreement.  Usage:

    python3 benchmarks/bench_backends.py [--batch 20000] [--steps 40]
"""
import argparse
import os
import time

import numpy as np


def run(batch: int, steps: int):
    os.environ.setdefault("GEOCUT_BACKEND", "auto")
    from geocut import Ellipsoid, EndpointMapSpec, TangentChart, auto_output_chart, endpoint_map_batch
    import geocut.backend as backend

    ell = Ellipsoid(np.array([1.0, 0.9, 0.8]))
    spec = ell.constraint()
    q0 = ell.surface_point(np.array([0.45, 0.7, 0.55]))
    chart = TangentChart.at(spec, q0)
    oc = auto_output_chart(spec, -q0)
    rng = np.random.default_rng(0)
    V = rng.uniform(-3.3, 3.3, size=(batch, 2))

    print(f"batch={batch}  steps={steps}  numba available: {backend.numba_available()}")
    header = f"{'scheme':<10} {'backend':<7} {'warm time':>10} {'nodes/s':>12}"
    print(header)
    print("-" * len(header))
    results = {}
    for scheme in ("del", "sympeuler", "rk2"):
        ems = EndpointMapSpec(scheme, spec, chart, oc, steps)
        for be in ("numba", "numpy"):
            if be == "numba" and not backend.numba_available():
                continue
            os.environ["GEOCUT_BACKEND"] = be
            endpoint_map_batch(ems, V[:64])  # warm up / JIT
            t0 = time.perf_counter()
            q, J, fail = endpoint_map_batch(ems, V)
            dt = time.perf_counter() - t0
            results[(scheme, be)] = (q, J, fail)
            print(f"{scheme:<10} {be:<7} {dt:>9.3f}s {batch / dt:>12.0f}")
        if (scheme, "numba") in results and (scheme, "numpy") in results:
            qa, Ja, fa = results[(scheme, "numba")]
            qb, Jb, fb = results[(scheme, "numpy")]
            ok = (fa == 0) & (fb == 0)
            dq = float(np.max(np.abs(qa[ok] - qb[ok])))
            dJ = float(np.max(np.abs(Ja[ok] - Jb[ok])))
            print(f"{'':10} agreement: max|dq| = {dq:.2e}, max|dJ| = {dJ:.2e}")
    os.environ["GEOCUT_BACKEND"] = "auto"


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=40)
    args = ap.parse_args()
    run(args.batch, args.steps)
