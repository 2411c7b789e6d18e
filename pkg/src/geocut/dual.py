"""Forward-mode automatic differentiation on numpy arrays.

Two truncated Taylor types are provided:

* :class:`Dual` -- value plus one family of ``s`` seed directions.  The
  derivative array always has shape ``val.shape + (s,)`` (seeds last).
* :class:`HyperDual` -- value plus two independent seed families and the
  mixed second-order block, used when :func:`jacobian` is applied to a
  function that already runs in dual arithmetic (one level of nesting).

All arithmetic is elementwise over the value shape and broadcasts like
numpy.  Reductions and indexing that touch value axes must go through the
``d*`` helpers below (``dsum``, ``dcomp``, ...) so the trailing seed axes
are shifted consistently; plain ndarrays pass through the same helpers
unchanged, which lets numerical kernels be written once for both plain
and differentiated evaluation.
"""
from __future__ import annotations

import numpy as np

from .errors import EvaluationFailed, GeocutError

__all__ = [
    "Dual",
    "HyperDual",
    "value",
    "dual_depth",
    "seed",
    "jacobian",
    "fd_jacobian",
    "jvp",
    "dsum",
    "dexpand",
    "dcomp",
    "dentry",
    "dwhere",
    "ddelete_rows",
    "dconcat",
    "dsolve",
    "dsqrt",
    "dsin",
    "dcos",
    "dexp",
    "dlog",
]


def _e1(x):
    """Append one singleton axis (broadcast a value against a 1-seed part)."""
    return np.asarray(x)[..., None]


def _e2(x):
    return np.asarray(x)[..., None, None]


def _outer12(a, b):
    """Outer product of a d1 part (.., s1) with a d2 part (.., s2) -> (.., s1, s2)."""
    return a[..., :, None] * b[..., None, :]


class Dual:
    """First-order truncated dual: ``val + eps_1 der`` with ``der.shape == val.shape + (s,)``."""

    __slots__ = ("val", "der")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)
        if self.der.shape[: self.val.ndim] != self.val.shape:
            raise ValueError(
                f"dual derivative shape {self.der.shape} does not extend value shape {self.val.shape}"
            )

    @property
    def shape(self):
        return self.val.shape

    @property
    def nseeds(self):
        return self.der.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, nseeds={self.nseeds})"

    # -- arithmetic ---------------------------------------------------
    def __add__(self, o):
        if isinstance(o, HyperDual):
            return o.__add__(self)
        if isinstance(o, Dual):
            return Dual(self.val + o.val, self.der + o.der)
        v = self.val + o
        der = self.der
        if v.shape != self.val.shape:
            der = np.broadcast_to(der, v.shape + (self.nseeds,))
        return Dual(v, der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, o):
        if isinstance(o, HyperDual):
            return (-o).__add__(self)
        return self.__add__(-o if isinstance(o, Dual) else np.negative(o))

    def __rsub__(self, o):
        return (-self).__add__(o)

    def __mul__(self, o):
        if isinstance(o, HyperDual):
            return o.__mul__(self)
        if isinstance(o, Dual):
            return Dual(self.val * o.val, self.der * _e1(o.val) + _e1(self.val) * o.der)
        return Dual(self.val * o, self.der * _e1(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, HyperDual):
            return o.__rtruediv__(self)
        if isinstance(o, Dual):
            inv = 1.0 / o.val
            v = self.val * inv
            return Dual(v, (self.der - _e1(v) * o.der) * _e1(inv))
        inv = 1.0 / np.asarray(o, dtype=float)
        return Dual(self.val * inv, self.der * _e1(inv))

    def __rtruediv__(self, o):
        inv = 1.0 / self.val
        v = o * inv
        return Dual(v, -_e1(v * inv) * self.der)

    def __pow__(self, p):
        if isinstance(p, (Dual, HyperDual)):
            raise TypeError("dual exponents are not supported")
        if p == 2:
            return Dual(self.val * self.val, 2.0 * _e1(self.val) * self.der)
        f1 = p * self.val ** (p - 1)
        return Dual(self.val**p, _e1(f1) * self.der)

    def __abs__(self):
        s = np.sign(self.val)
        return Dual(np.abs(self.val), _e1(s) * self.der)

    # comparisons act on the value part (used only for control flow)
    def __lt__(self, o):
        return self.val < value(o)

    def __le__(self, o):
        return self.val <= value(o)

    def __gt__(self, o):
        return self.val > value(o)

    def __ge__(self, o):
        return self.val >= value(o)

    def __getitem__(self, idx):
        # leading (batch) indexing only; seed axes ride along untouched
        return Dual(self.val[idx], self.der[idx])

    def sum(self, axis):
        if axis >= 0:
            raise ValueError("dual reductions require a negative axis")
        return Dual(self.val.sum(axis=axis), self.der.sum(axis=axis - 1))


class HyperDual:
    """Second-order truncated dual with two seed families (s1, s2) and the mixed block."""

    __slots__ = ("val", "d1", "d2", "d12")
    __array_ufunc__ = None

    def __init__(self, val, d1, d2, d12):
        self.val = np.asarray(val, dtype=float)
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)
        self.d12 = np.asarray(d12, dtype=float)

    @property
    def shape(self):
        return self.val.shape

    @property
    def seeds(self):
        return (self.d1.shape[-1], self.d2.shape[-1])

    def __repr__(self):
        return f"HyperDual(val={self.val!r}, seeds={self.seeds})"

    def __add__(self, o):
        u, v = _as_hyper(self), _as_hyper_like(o, self)
        return HyperDual(u.val + v.val, u.d1 + v.d1, u.d2 + v.d2, u.d12 + v.d12)

    __radd__ = __add__

    def __neg__(self):
        return HyperDual(-self.val, -self.d1, -self.d2, -self.d12)

    def __sub__(self, o):
        return self.__add__(-o if isinstance(o, (Dual, HyperDual)) else np.negative(o))

    def __rsub__(self, o):
        return (-self).__add__(o)

    def __mul__(self, o):
        u, v = self, _as_hyper_like(o, self)
        return HyperDual(
            u.val * v.val,
            u.d1 * _e1(v.val) + _e1(u.val) * v.d1,
            u.d2 * _e1(v.val) + _e1(u.val) * v.d2,
            u.d12 * _e2(v.val)
            + _e2(u.val) * v.d12
            + _outer12(u.d1, v.d2)
            + _outer12(v.d1, u.d2),
        )

    __rmul__ = __mul__

    def _reciprocal(self):
        inv = 1.0 / self.val
        inv2 = inv * inv
        d1 = -self.d1 * _e1(inv2)
        d2 = -self.d2 * _e1(inv2)
        d12 = -self.d12 * _e2(inv2) + 2.0 * _outer12(self.d1, self.d2) * _e2(inv2 * inv)
        return HyperDual(inv, d1, d2, d12)

    def __truediv__(self, o):
        v = _as_hyper_like(o, self)
        return self * v._reciprocal()

    def __rtruediv__(self, o):
        return _as_hyper_like(o, self) * self._reciprocal()

    def __pow__(self, p):
        if isinstance(p, (Dual, HyperDual)):
            raise TypeError("dual exponents are not supported")
        return _lift_unary(self, self.val**p, p * self.val ** (p - 1), p * (p - 1) * self.val ** (p - 2))

    def __abs__(self):
        s = np.sign(self.val)
        return _lift_unary(self, np.abs(self.val), s, np.zeros_like(s))

    def __lt__(self, o):
        return self.val < value(o)

    def __le__(self, o):
        return self.val <= value(o)

    def __gt__(self, o):
        return self.val > value(o)

    def __ge__(self, o):
        return self.val >= value(o)

    def __getitem__(self, idx):
        return HyperDual(self.val[idx], self.d1[idx], self.d2[idx], self.d12[idx])

    def sum(self, axis):
        if axis >= 0:
            raise ValueError("dual reductions require a negative axis")
        return HyperDual(
            self.val.sum(axis=axis),
            self.d1.sum(axis=axis - 1),
            self.d2.sum(axis=axis - 1),
            self.d12.sum(axis=axis - 2),
        )


def _as_hyper(x):
    return x


def _as_hyper_like(o, template: HyperDual) -> HyperDual:
    if isinstance(o, HyperDual):
        return o
    s1, s2 = template.seeds
    if isinstance(o, Dual):
        if o.nseeds != s2:
            raise ValueError(
                f"cannot mix a {o.nseeds}-seed Dual with a HyperDual carrying s2={s2}"
            )
        v = o.val
        return HyperDual(v, np.zeros(v.shape + (s1,)), o.der, np.zeros(v.shape + (s1, s2)))
    v = np.asarray(o, dtype=float)
    return HyperDual(v, np.zeros(v.shape + (s1,)), np.zeros(v.shape + (s2,)), np.zeros(v.shape + (s1, s2)))


def _lift_unary(x, f0, f1, f2=None):
    """Chain rule for an elementwise function given f, f' (and f'' for HyperDual)."""
    if isinstance(x, Dual):
        return Dual(f0, _e1(f1) * x.der)
    if isinstance(x, HyperDual):
        return HyperDual(
            f0,
            _e1(f1) * x.d1,
            _e1(f1) * x.d2,
            _e2(f1) * x.d12 + _e2(f2) * _outer12(x.d1, x.d2),
        )
    return f0


# ---------------------------------------------------------------------------
# elementwise functions
# ---------------------------------------------------------------------------

def dsqrt(x):
    v = value(x)
    r = np.sqrt(v)
    if not isinstance(x, (Dual, HyperDual)):
        return r
    return _lift_unary(x, r, 0.5 / r, -0.25 / (r * v))


def dsin(x):
    v = value(x)
    if not isinstance(x, (Dual, HyperDual)):
        return np.sin(v)
    return _lift_unary(x, np.sin(v), np.cos(v), -np.sin(v))


def dcos(x):
    v = value(x)
    if not isinstance(x, (Dual, HyperDual)):
        return np.cos(v)
    return _lift_unary(x, np.cos(v), -np.sin(v), -np.cos(v))


def dexp(x):
    v = value(x)
    e = np.exp(v)
    if not isinstance(x, (Dual, HyperDual)):
        return e
    return _lift_unary(x, e, e, e)


def dlog(x):
    v = value(x)
    if not isinstance(x, (Dual, HyperDual)):
        return np.log(v)
    return _lift_unary(x, np.log(v), 1.0 / v, -1.0 / (v * v))


# ---------------------------------------------------------------------------
# structural helpers (value-axis aware)
# ---------------------------------------------------------------------------

def value(x):
    """Strip all derivative information."""
    if isinstance(x, (Dual, HyperDual)):
        return x.val
    return x


def dual_depth(*xs) -> int:
    """0 for plain arrays, 1 if any Dual, 2 if any HyperDual."""
    depth = 0
    for x in xs:
        if isinstance(x, HyperDual):
            depth = max(depth, 2)
        elif isinstance(x, Dual):
            depth = max(depth, 1)
    return depth


def _check_axis(axis):
    if axis >= 0:
        raise ValueError("dual helpers require negative (value-relative) axes")


def dsum(x, axis: int):
    _check_axis(axis)
    if isinstance(x, (Dual, HyperDual)):
        return x.sum(axis)
    return np.sum(x, axis=axis)


def dexpand(x, axis: int = -1):
    """Insert a singleton value axis at the given negative position."""
    _check_axis(axis)
    if isinstance(x, Dual):
        return Dual(np.expand_dims(x.val, axis), np.expand_dims(x.der, axis - 1))
    if isinstance(x, HyperDual):
        return HyperDual(
            np.expand_dims(x.val, axis),
            np.expand_dims(x.d1, axis - 1),
            np.expand_dims(x.d2, axis - 1),
            np.expand_dims(x.d12, axis - 2),
        )
    return np.expand_dims(x, axis)


def dcomp(x, i: int):
    """Select component ``i`` of the last value axis."""
    if isinstance(x, Dual):
        return Dual(x.val[..., i], x.der[..., i, :])
    if isinstance(x, HyperDual):
        return HyperDual(x.val[..., i], x.d1[..., i, :], x.d2[..., i, :], x.d12[..., i, :, :])
    return np.asarray(x)[..., i]


def dentry(M, i: int, j: int):
    """Select entry ``[i, j]`` of the last two value axes."""
    if isinstance(M, Dual):
        return Dual(M.val[..., i, j], M.der[..., i, j, :])
    if isinstance(M, HyperDual):
        return HyperDual(M.val[..., i, j], M.d1[..., i, j, :], M.d2[..., i, j, :], M.d12[..., i, j, :, :])
    return np.asarray(M)[..., i, j]


def dwhere(cond, a, b):
    """Elementwise select on a plain boolean condition."""
    cond = np.asarray(cond)
    depth = dual_depth(a, b)
    if depth == 0:
        return np.where(cond, a, b)
    if depth == 1:
        s = a.nseeds if isinstance(a, Dual) else b.nseeds
        av, ad = (a.val, a.der) if isinstance(a, Dual) else (np.asarray(a, float), None)
        bv, bd = (b.val, b.der) if isinstance(b, Dual) else (np.asarray(b, float), None)
        shape = np.broadcast_shapes(av.shape, bv.shape, cond.shape)
        if ad is None:
            ad = np.zeros(shape + (s,))
        if bd is None:
            bd = np.zeros(shape + (s,))
        return Dual(np.where(cond, av, bv), np.where(cond[..., None], ad, bd))
    ah = a if isinstance(a, HyperDual) else None
    bh = b if isinstance(b, HyperDual) else None
    tmpl = ah if ah is not None else bh
    ah = _as_hyper_like(a, tmpl)
    bh = _as_hyper_like(b, tmpl)
    return HyperDual(
        np.where(cond, ah.val, bh.val),
        np.where(cond[..., None], ah.d1, bh.d1),
        np.where(cond[..., None], ah.d2, bh.d2),
        np.where(cond[..., None, None], ah.d12, bh.d12),
    )


def ddelete_rows(M, rows, axis: int = -2):
    """Delete rows of the value axis ``axis`` (default: second-to-last)."""
    _check_axis(axis)
    if isinstance(M, Dual):
        return Dual(np.delete(M.val, rows, axis=axis), np.delete(M.der, rows, axis=axis - 1))
    if isinstance(M, HyperDual):
        return HyperDual(
            np.delete(M.val, rows, axis=axis),
            np.delete(M.d1, rows, axis=axis - 1),
            np.delete(M.d2, rows, axis=axis - 1),
            np.delete(M.d12, rows, axis=axis - 2),
        )
    return np.delete(np.asarray(M), rows, axis=axis)


def datleast_1d(x):
    """Flatten a scalar-or-vector quantity to a 1-D value shape."""
    if isinstance(x, Dual):
        return Dual(x.val.reshape(-1), x.der.reshape(-1, x.der.shape[-1]))
    if isinstance(x, HyperDual):
        s1, s2 = x.seeds
        return HyperDual(
            x.val.reshape(-1),
            x.d1.reshape(-1, s1),
            x.d2.reshape(-1, s2),
            x.d12.reshape(-1, s1, s2),
        )
    return np.atleast_1d(np.asarray(x, dtype=float))


def dconcat(parts, axis: int = -1):
    _check_axis(axis)
    depth = dual_depth(*parts)
    if depth == 0:
        return np.concatenate([np.asarray(p, float) for p in parts], axis=axis)
    if depth == 1:
        s = next(p.nseeds for p in parts if isinstance(p, Dual))
        vals, ders = [], []
        for p in parts:
            if isinstance(p, Dual):
                vals.append(p.val)
                ders.append(p.der)
            else:
                v = np.asarray(p, dtype=float)
                vals.append(v)
                ders.append(np.zeros(v.shape + (s,)))
        return Dual(np.concatenate(vals, axis=axis), np.concatenate(ders, axis=axis - 1))
    tmpl = next(p for p in parts if isinstance(p, HyperDual))
    hs = [_as_hyper_like(p, tmpl) if not isinstance(p, HyperDual) else p for p in parts]
    return HyperDual(
        np.concatenate([h.val for h in hs], axis=axis),
        np.concatenate([h.d1 for h in hs], axis=axis - 1),
        np.concatenate([h.d2 for h in hs], axis=axis - 1),
        np.concatenate([h.d12 for h in hs], axis=axis - 2),
    )


def _solve_rhs(A0, B):
    """np.linalg.solve with an arbitrary stack of trailing rhs axes."""
    if B.ndim == A0.ndim - 1:
        return np.linalg.solve(A0, B[..., None])[..., 0]
    extra = B.shape[A0.ndim - 1 :]
    Bf = B.reshape(B.shape[: A0.ndim - 1] + (int(np.prod(extra)),))
    X = np.linalg.solve(A0, Bf)
    return X.reshape(B.shape)


def dsolve(A, b):
    """Solve batched square systems ``A x = b`` with dual/hyperdual A, b.

    ``A`` has value shape (..., m, m) and ``b`` (..., m).  Tangents follow
    from differentiating ``A x = b`` once or twice.
    """
    depth = dual_depth(A, b)
    A0 = value(A)
    b0 = value(b)
    x0 = _solve_rhs(A0, b0)
    if depth == 0:
        return x0
    if depth == 1:
        s = A.nseeds if isinstance(A, Dual) else b.nseeds
        bd = b.der if isinstance(b, Dual) else np.zeros(b0.shape + (s,))
        if isinstance(A, Dual):
            rhs = bd - np.einsum("...ijs,...j->...is", A.der, x0)
        else:
            rhs = bd
        return Dual(x0, _solve_rhs(A0, rhs))
    tmpl = A if isinstance(A, HyperDual) else b
    Ah = A if isinstance(A, HyperDual) else _as_hyper_like(A, tmpl)
    bh = b if isinstance(b, HyperDual) else _as_hyper_like(b, tmpl)
    x1 = _solve_rhs(A0, bh.d1 - np.einsum("...ijs,...j->...is", Ah.d1, x0))
    x2 = _solve_rhs(A0, bh.d2 - np.einsum("...ijt,...j->...it", Ah.d2, x0))
    rhs12 = (
        bh.d12
        - np.einsum("...ijst,...j->...ist", Ah.d12, x0)
        - np.einsum("...ijs,...jt->...ist", Ah.d1, x2)
        - np.einsum("...ijt,...js->...ist", Ah.d2, x1)
    )
    return HyperDual(x0, x1, x2, _solve_rhs(A0, rhs12))


# ---------------------------------------------------------------------------
# seeding / jacobians
# ---------------------------------------------------------------------------

def seed(x):
    """Seed a 1-D point with the identity so a full Jacobian comes out of one pass.

    A plain array becomes a Dual; a Dual input (nested differentiation) is
    promoted to a HyperDual whose d1 block carries the new seeds and whose
    d2 block keeps the incoming tangents.
    """
    if isinstance(x, HyperDual):
        raise GeocutError("nesting beyond second order is not supported")
    if isinstance(x, Dual):
        a = x.val.shape[-1]
        eye = np.broadcast_to(np.eye(a), x.val.shape + (a,)).copy()
        return HyperDual(x.val, eye, x.der, np.zeros(x.val.shape + (a, x.nseeds)))
    x = np.asarray(x, dtype=float)
    a = x.shape[-1]
    eye = np.broadcast_to(np.eye(a), x.shape + (a,)).copy()
    return Dual(x, eye)


def _extract_jacobian(y, x_was_dual: bool):
    if x_was_dual:
        if isinstance(y, HyperDual):
            return Dual(y.d1, y.d12)
        raise GeocutError("function lost its dual dependence")
    if isinstance(y, Dual):
        return y.der
    y = np.asarray(y, dtype=float)
    return np.zeros(y.shape + (0,))


def jacobian(F, x):
    """Exact Jacobian of ``F`` at ``x`` via one forward pass with identity seeds.

    ``F`` maps a 1-D point of length a to a 1-D point of length b using
    dual-capable arithmetic; the result has shape (b, a).  When ``x`` is
    itself a Dual the returned Jacobian is a Dual carrying the incoming
    tangents (nested forward mode).
    """
    nested = isinstance(x, Dual)
    X = seed(x)
    try:
        y = F(X)
    except GeocutError as exc:
        raise EvaluationFailed(f"function evaluation failed inside jacobian: {exc}") from exc
    J = _extract_jacobian(y, nested)
    a = np.shape(value(x))[-1]
    if nested:
        if J.val.shape[-1] != a:
            raise GeocutError("jacobian seed mismatch")
        return J
    J = np.asarray(J)
    return J.reshape((-1, a))


def fd_jacobian(F, x, h: float = 1e-6):
    """Central finite-difference Jacobian with step ``h`` (cross-validation oracle)."""
    x = np.asarray(value(x), dtype=float)
    try:
        cols = []
        for j in range(x.shape[-1]):
            dx = np.zeros_like(x)
            dx[..., j] = h
            fp = np.asarray(value(F(x + dx)), dtype=float).ravel()
            fm = np.asarray(value(F(x - dx)), dtype=float).ravel()
            cols.append((fp - fm) / (2.0 * h))
    except GeocutError as exc:
        raise EvaluationFailed(f"function evaluation failed inside fd_jacobian: {exc}") from exc
    return np.stack(cols, axis=-1)


def jvp(F, x, direction):
    """Directional derivative of ``F`` at ``x`` along ``direction`` (single seed)."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    X = Dual(x, d[..., None])
    try:
        y = F(X)
    except GeocutError as exc:
        raise EvaluationFailed(f"function evaluation failed inside jvp: {exc}") from exc
    if isinstance(y, Dual):
        return y.val, y.der[..., 0]
    y = np.asarray(value(y), dtype=float)
    return y, np.zeros_like(y)
