import numpy as np
import pytest

import geocut.backend as backend
from geocut import Ellipsoid, EndpointMapSpec, TangentChart, auto_output_chart, endpoint_map_batch, plane_constraint


@pytest.fixture
def ellipsoid_setup():
    ell = Ellipsoid(np.array([1.0, 0.9, 0.8]))
    spec = ell.constraint()
    q0 = ell.surface_point(np.array([0.45, 0.7, 0.55]))
    chart = TangentChart.at(spec, q0)
    oc = auto_output_chart(spec, -q0)
    return spec, chart, oc


@pytest.fixture
def force_backend(monkeypatch):
    def setter(name):
        monkeypatch.setenv(backend.ENV_FLAG, name)

    return setter


@pytest.mark.parametrize("scheme", ["del", "sympeuler", "rk2"])
def test_numba_and_numpy_agree(scheme, ellipsoid_setup, force_backend):
    spec, chart, oc = ellipsoid_setup
    ems = EndpointMapSpec(scheme, spec, chart, oc, N=40)
    rng = np.random.default_rng(1)
    V = rng.uniform(-3, 3, size=(200, 2))
    force_backend("numba")
    q_nb, J_nb, f_nb = endpoint_map_batch(ems, V)
    force_backend("numpy")
    q_np, J_np, f_np = endpoint_map_batch(ems, V)
    ok = (f_nb == 0) & (f_np == 0)
    assert ok.sum() > 190
    assert np.max(np.abs(q_nb[ok] - q_np[ok])) <= 1e-10
    assert np.max(np.abs(J_nb[ok] - J_np[ok])) <= 1e-10


def test_env_flag_selects_backend(ellipsoid_setup, force_backend):
    spec, _, _ = ellipsoid_setup
    force_backend("numpy")
    assert not backend.use_numba(spec)
    force_backend("auto")
    assert backend.use_numba(spec) == backend.numba_available()
    force_backend("nonsense")
    with pytest.raises(ValueError):
        backend.backend_choice()


def test_numba_refuses_non_quadric(force_backend):
    spec = plane_constraint(3)
    force_backend("numba")
    with pytest.raises(RuntimeError):
        backend.use_numba(spec)
    force_backend("auto")
    assert not backend.use_numba(spec)  # silently falls back


def test_thread_setting_does_not_change_results(ellipsoid_setup, force_backend):
    spec, chart, oc = ellipsoid_setup
    if not backend.numba_available():
        pytest.skip("numba unavailable")
    force_backend("numba")
    ems = EndpointMapSpec("del", spec, chart, oc, N=30)
    rng = np.random.default_rng(9)
    V = rng.uniform(-3, 3, size=(500, 2))
    backend.set_threads(1)
    q1, J1, f1 = endpoint_map_batch(ems, V)
    backend.set_threads(4)
    q2, J2, f2 = endpoint_map_batch(ems, V)
    assert np.array_equal(f1, f2)
    assert np.array_equal(q1, q2)
    assert np.array_equal(J1, J2)
