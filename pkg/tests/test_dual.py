import numpy as np
import pytest

from geocut.dual import (
    dcomp,
    Dual,
    dconcat,
    dcos,
    dexp,
    dexpand,
    dsin,
    dsolve,
    dsqrt,
    dwhere,
    fd_jacobian,
    jacobian,
    jvp,
    value,
)
from geocut.errors import EvaluationFailed, NewtonDiverged


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


def _flatten(y):
    """Reshape a (possibly dual) array-valued result to 1-D."""
    if isinstance(y, Dual):
        return Dual(y.val.reshape(-1), y.der.reshape(-1, y.der.shape[-1]))
    return np.asarray(value(y)).reshape(-1)


def test_square_scalar():
    J = jacobian(lambda x: x * x, np.array([3.0]))
    assert J.shape == (1, 1)
    assert J[0, 0] == pytest.approx(6.0, abs=0.0)


def test_bilinear():
    def G(x):
        return dconcat([x[0:1] * x[1:2], x[0:1] + x[1:2]], -1)

    J = jacobian(G, np.array([2.0, 5.0]))
    assert np.allclose(J, [[5.0, 2.0], [1.0, 1.0]])


def test_fd_cubic():
    J = fd_jacobian(lambda x: x**3, np.array([1.0]), h=1e-4)
    assert abs(J[0, 0] - 3.0) < 1e-6


def test_fd_sin():
    J = fd_jacobian(lambda x: dsin(x), np.array([0.0]), h=1e-5)
    assert abs(J[0, 0] - 1.0) < 1e-9


def _random_expression(rng, nvar):
    """Random closed polynomial/rational expression tree over dual-capable ops."""
    ops = ["add", "sub", "mul", "div", "sqr", "sin", "cos", "exp", "sqrt1p", "scale"]

    def build(depth):
        if depth == 0:
            if rng.random() < 0.3:
                c = float(rng.uniform(-2, 2))
                return lambda x: c
            j = int(rng.integers(nvar))
            return lambda x: x[j : j + 1]
        op = ops[int(rng.integers(len(ops)))]
        a = build(depth - 1)
        b = build(depth - 1)
        if op == "add":
            return lambda x: a(x) + b(x)
        if op == "sub":
            return lambda x: a(x) - b(x)
        if op == "mul":
            return lambda x: a(x) * b(x)
        if op == "div":
            return lambda x: a(x) / (2.0 + b(x) * b(x))  # guarded denominator
        if op == "sqr":
            return lambda x: a(x) * a(x)
        if op == "sin":
            return lambda x: dsin(a(x))
        if op == "cos":
            return lambda x: dcos(a(x))
        if op == "exp":
            return lambda x: dexp(0.3 * a(x))
        if op == "sqrt1p":
            return lambda x: dsqrt(1.0 + a(x) * a(x))
        c = float(rng.uniform(-1.5, 1.5))
        return lambda x: c * a(x)

    return build(3)


def test_randomized_expressions_match_fd():
    rng = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(1000):
        nvar = int(rng.integers(1, 4))
        f = _random_expression(rng, nvar)

        def F(x, f=f):
            y = f(x)
            if np.shape(value(y)) == ():
                y = y + 0.0 * x[0:1]  # constant expression: keep output 1-D
            return y

        x = rng.uniform(-1.2, 1.2, size=nvar)
        J = jacobian(F, x)
        Jfd = fd_jacobian(F, x, h=1e-6)
        worst = max(worst, rel_err(J, Jfd))
    assert worst <= 1e-6


def test_zero_seed_duals_reproduce_plain_bitwise():
    rng = np.random.default_rng(7)
    for _ in range(50):
        f = _random_expression(rng, 3)
        x = rng.uniform(-1.1, 1.1, size=3)
        plain = np.asarray(value(f(x)))
        dualled = f(Dual(x, np.zeros((3, 0))))
        assert np.array_equal(np.asarray(value(dualled)), plain)


def test_nested_second_derivatives():
    # f(x) = x0^2 x1 + sin(x0); Hessian via jacobian of the AD gradient
    def f(x):
        return x[0:1] * x[0:1] * x[1:2] + dsin(x[0:1])

    x0, x1 = 0.7, -1.3
    H = jacobian(lambda x: _flatten(jacobian(f, x)), np.array([x0, x1]))
    expected = np.array([[2 * x1 - np.sin(x0), 2 * x0], [2 * x0, 0.0]])
    assert np.allclose(H, expected, atol=1e-12)


def test_hyperdual_division_and_sqrt():
    def f(x):
        return dsqrt(1.0 + x[0:1] * x[0:1]) / (2.0 + x[1:2])

    x = np.array([0.8, 0.4])
    H = jacobian(lambda z: _flatten(jacobian(f, z)), x)

    eps = 1e-5

    def num_grad(p):
        g = np.zeros(2)
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = eps
            g[j] = (value(f(p + dp))[0] - value(f(p - dp))[0]) / (2 * eps)
        return g

    Hfd = np.zeros((2, 2))
    for j in range(2):
        dp = np.zeros(2)
        dp[j] = eps
        Hfd[:, j] = (num_grad(x + dp) - num_grad(x - dp)) / (2 * eps)
    assert np.max(np.abs(H - Hfd)) < 1e-5


def test_jvp_matches_jacobian():
    def F(x):
        return dconcat([x[0:1] * x[1:2], dcos(x[0:1])], -1)

    x = np.array([0.3, 1.7])
    v = np.array([0.5, -0.25])
    _, dy = jvp(F, x, v)
    J = jacobian(F, x)
    assert np.allclose(dy, J @ v, atol=1e-14)


def test_dsolve_dual_matches_fd():
    rng = np.random.default_rng(3)
    A0 = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    b0 = rng.normal(size=2)

    def F(x):
        A = A0 + dexpand(dexpand(dcomp(x, 0), -1), -1) * np.eye(2)
        b = b0 + dcomp(x, 1) * np.ones(2)
        return _flatten(dsolve(A, b))

    x = np.array([0.2, -0.4])
    J = jacobian(F, x)
    Jfd = fd_jacobian(F, x, h=1e-7)
    assert rel_err(J, Jfd) < 1e-7


def test_where_selects_with_tangents():
    a = Dual(np.array([1.0, 2.0]), np.eye(2))
    b = Dual(np.array([5.0, 6.0]), -np.eye(2))
    c = dwhere(np.array([True, False]), a, b)
    assert np.allclose(c.val, [1.0, 6.0])
    assert np.allclose(c.der, [[1.0, 0.0], [0.0, -1.0]])


def test_evaluation_failed_wraps_geocut_errors():
    def bad(x):
        raise NewtonDiverged("no root")

    with pytest.raises(EvaluationFailed):
        jacobian(bad, np.array([1.0]))
