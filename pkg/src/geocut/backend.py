"""Hot-path backend selection.

The endpoint-map kernels exist twice: compiled numba loops for quadric
(ellipsoid-type, m = 1) constraints and the generic vectorised numpy path.
``GEOCUT_BACKEND`` picks between them:

* ``auto``  (default) numba when importable and the constraint is quadric
* ``numba`` force the compiled path (errors if unusable)
* ``numpy`` force the pure-numpy path

``benchmarks/bench_backends.py`` compares the two.
"""
from __future__ import annotations

import os

ENV_FLAG = "GEOCUT_BACKEND"
_CHOICES = ("auto", "numba", "numpy")


def backend_choice() -> str:
    choice = os.environ.get(ENV_FLAG, "auto").lower()
    if choice not in _CHOICES:
        raise ValueError(f"{ENV_FLAG} must be one of {_CHOICES}, got {choice!r}")
    return choice


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def use_numba(spec) -> bool:
    """Whether the compiled kernels serve this constraint under the env flag."""
    choice = backend_choice()
    if choice == "numpy":
        return False
    eligible = spec.quadric is not None and spec.m == 1 and numba_available()
    if choice == "numba" and not eligible:
        raise RuntimeError(
            "GEOCUT_BACKEND=numba requires numba and a quadric (m=1) constraint"
        )
    return eligible


def set_threads(k: int) -> None:
    """Bound the worker pool used by the compiled mesh kernels."""
    if k < 1:
        raise ValueError("thread count must be positive")
    if numba_available():
        import numba

        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))
