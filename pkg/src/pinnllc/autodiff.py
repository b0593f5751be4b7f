"""Reverse-mode tape over array expressions, plus forward-mode jets.

The reverse half records every primitive applied to a ``Var`` and replays the
chain rule backwards, giving exact gradients of a scalar with respect to a
flat parameter vector.  The forward half propagates first- and second-order
input derivatives (``Dual1`` / ``Dual2``) through the same arithmetic, with
components that may themselves be taped ``Var`` expressions.  That way a PDE
residual built from du/dt and d2u/dx2 of a network output is an ordinary
taped scalar, and the reverse pass differentiates straight through the
derivative computation.

Values flowing through the tape are floats or numpy arrays; all arithmetic is
64-bit.  Tapes are confined to the thread that created them.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Dual1",
    "Dual2",
    "NumericalFailure",
    "grad",
    "input_derivatives",
]


class NumericalFailure(ArithmeticError):
    """A non-finite value (overflow or NaN) appeared during evaluation.

    ``op_kind`` names the primitive whose output first went non-finite.
    """

    def __init__(self, op_kind, detail=""):
        self.op_kind = op_kind
        msg = f"numerical failure in primitive '{op_kind}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class Tape:
    """Append-only record of primitive operations in evaluation order.

    Nodes are stored topologically by construction: an operation can only
    consume values that already exist, so a single reverse sweep visits each
    node exactly once.
    """

    __slots__ = ("_ops", "_args", "_vals", "_ctx")

    def __init__(self):
        self._ops = []
        self._args = []
        self._vals = []
        self._ctx = []

    def __len__(self):
        return len(self._ops)

    def variable(self, value):
        """Register a leaf value and return its handle."""
        return self._push("leaf", (), value, None)

    def _push(self, op, args, value, ctx):
        idx = len(self._ops)
        self._ops.append(op)
        self._args.append(args)
        self._vals.append(value)
        self._ctx.append(ctx)
        return Var(self, idx)

    def op_kind(self, idx):
        return self._ops[idx]

    def value(self, idx):
        return self._vals[idx]

    # -- reverse sweep -----------------------------------------------------

    def backward(self, out, wrt):
        """Gradient of scalar node ``out`` with respect to leaf ``wrt``."""
        if out.tape is not self or wrt.tape is not self:
            raise ValueError("out and wrt must live on this tape")
        end = out.idx
        vals = self._vals
        ops = self._ops
        args = self._args
        ctxs = self._ctx

        grads = [None] * (end + 1)
        owned = [False] * (end + 1)

        def acc(i, g):
            if grads[i] is None:
                grads[i] = g
                owned[i] = False
            elif owned[i] and isinstance(grads[i], np.ndarray):
                grads[i] += _unbroadcast(g, grads[i].shape)
            else:
                grads[i] = grads[i] + g
                owned[i] = True

        def acc_shaped(i, g):
            # like acc but reduces g to the parent's shape first
            shape = np.shape(vals[i])
            acc(i, _unbroadcast(g, shape))

        grads[end] = 1.0
        for i in range(end, -1, -1):
            g = grads[i]
            if g is None:
                continue
            op = ops[i]
            if op == "leaf":
                continue
            a = args[i]
            c = ctxs[i]
            v = vals[i]
            if op == "add":
                acc_shaped(a[0], g)
                acc_shaped(a[1], g)
            elif op == "addc":
                acc_shaped(a[0], g)
            elif op == "sub":
                acc_shaped(a[0], g)
                acc_shaped(a[1], -g)
            elif op == "subc":
                acc_shaped(a[0], g)
            elif op == "csub":
                acc_shaped(a[0], -g)
            elif op == "neg":
                acc_shaped(a[0], -g)
            elif op == "mul":
                acc_shaped(a[0], g * vals[a[1]])
                acc_shaped(a[1], g * vals[a[0]])
            elif op == "mulc":
                acc_shaped(a[0], g * c)
            elif op == "div":
                b = vals[a[1]]
                acc_shaped(a[0], g / b)
                acc_shaped(a[1], -g * v / b)
            elif op == "divc":
                acc_shaped(a[0], g / c)
            elif op == "cdiv":
                acc_shaped(a[0], -g * v / vals[a[0]])
            elif op == "pow":
                x = vals[a[0]]
                acc_shaped(a[0], g * c * x ** (c - 1.0))
            elif op == "square":
                acc_shaped(a[0], g * (2.0 * vals[a[0]]))
            elif op == "tanh":
                acc_shaped(a[0], g * (1.0 - v * v))
            elif op == "sin":
                acc_shaped(a[0], g * np.cos(vals[a[0]]))
            elif op == "cos":
                acc_shaped(a[0], -g * np.sin(vals[a[0]]))
            elif op == "exp":
                acc_shaped(a[0], g * v)
            elif op == "sum":
                acc(a[0], np.broadcast_to(g, np.shape(vals[a[0]])))
            elif op == "mean":
                n = max(np.size(vals[a[0]]), 1)
                acc(a[0], np.broadcast_to(g / n, np.shape(vals[a[0]])))
            elif op == "matmul":
                ga, gb = _matmul_backward(g, vals[a[0]], vals[a[1]])
                acc(a[0], ga)
                acc(a[1], gb)
            elif op == "matmulc_r":
                ga, _ = _matmul_backward(g, vals[a[0]], c)
                acc(a[0], ga)
            elif op == "matmulc_l":
                _, gb = _matmul_backward(g, c, vals[a[0]])
                acc(a[0], gb)
            elif op == "slice":
                start, stop = c
                j = a[0]
                if grads[j] is None or not owned[j]:
                    base = np.zeros(np.shape(vals[j]))
                    if grads[j] is not None:
                        base += grads[j]
                    grads[j] = base
                    owned[j] = True
                grads[j][start:stop] += g
            elif op == "reshape":
                acc(a[0], np.reshape(g, np.shape(vals[a[0]])))
            else:  # pragma: no cover
                raise AssertionError(f"unknown op {op!r}")
            grads[i] = None  # release memory as we go

        g = grads[wrt.idx]
        if g is None:
            return np.zeros(np.shape(vals[wrt.idx]))
        return np.array(g, dtype=np.float64, copy=True)

    # -- failure diagnostics ------------------------------------------------

    def first_nonfinite(self, upto=None):
        """Op kind of the earliest node holding a non-finite value, or None."""
        stop = len(self._ops) if upto is None else upto + 1
        for i in range(stop):
            v = self._vals[i]
            if isinstance(v, np.ndarray):
                if not np.isfinite(v).all():
                    return self._ops[i]
            elif not math.isfinite(v):
                return self._ops[i]
        return None


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    gshape = np.shape(g)
    if gshape == shape:
        return g
    if shape == ():
        return np.sum(g)
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _matmul_backward(g, a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    g = np.asarray(g)
    if a.ndim == 1 and b.ndim == 2:
        # (k,) @ (k,m) -> (m,)
        return g @ b.T, a[:, None] * g[None, :]
    if a.ndim == 2 and b.ndim == 1:
        # (n,k) @ (k,) -> (n,)
        return g[:, None] * b[None, :], a.T @ g
    return g @ b.T, a.T @ g


class Var:
    """Handle to one tape node.  Supports the arithmetic the tape records."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # keep numpy from swallowing Var operands

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape._vals[self.idx]

    @property
    def shape(self):
        return np.shape(self.tape._vals[self.idx])

    def __repr__(self):
        return f"Var(op={self.tape._ops[self.idx]!r}, shape={self.shape})"

    # -- binary arithmetic --------------------------------------------------

    def _binary(self, other, op_vv, op_vc, op_cv=None):
        if isinstance(other, _JET_TYPES):
            return NotImplemented
        t = self.tape
        if isinstance(other, Var):
            if other.tape is not t:
                raise ValueError("operands live on different tapes")
            return op_vv(t, self, other)
        other = _as_value(other)
        return op_vc(t, self, other)

    def __add__(self, other):
        return self._binary(
            other,
            lambda t, a, b: t._push("add", (a.idx, b.idx), a.value + b.value, None),
            lambda t, a, c: t._push("addc", (a.idx,), a.value + c, c),
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(
            other,
            lambda t, a, b: t._push("sub", (a.idx, b.idx), a.value - b.value, None),
            lambda t, a, c: t._push("subc", (a.idx,), a.value - c, c),
        )

    def __rsub__(self, other):
        if isinstance(other, _JET_TYPES):
            return NotImplemented
        c = _as_value(other)
        return self.tape._push("csub", (self.idx,), c - self.value, c)

    def __mul__(self, other):
        return self._binary(
            other,
            lambda t, a, b: t._push("mul", (a.idx, b.idx), a.value * b.value, None),
            lambda t, a, c: t._push("mulc", (a.idx,), a.value * c, c),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other,
            lambda t, a, b: t._push("div", (a.idx, b.idx), a.value / b.value, None),
            lambda t, a, c: t._push("divc", (a.idx,), a.value / c, c),
        )

    def __rtruediv__(self, other):
        if isinstance(other, _JET_TYPES):
            return NotImplemented
        c = _as_value(other)
        return self.tape._push("cdiv", (self.idx,), c / self.value, c)

    def __neg__(self):
        return self.tape._push("neg", (self.idx,), -self.value, None)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        if p == 2.0:
            return self.tape._push("square", (self.idx,), self.value * self.value, None)
        return self.tape._push("pow", (self.idx,), self.value ** p, p)

    def __matmul__(self, other):
        if isinstance(other, _JET_TYPES):
            return NotImplemented
        t = self.tape
        if isinstance(other, Var):
            if other.tape is not t:
                raise ValueError("operands live on different tapes")
            return t._push("matmul", (self.idx, other.idx), self.value @ other.value, None)
        other = np.asarray(other, dtype=np.float64)
        return t._push("matmulc_r", (self.idx,), self.value @ other, other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=np.float64)
        return self.tape._push("matmulc_l", (self.idx,), other @ self.value, other)

    def __getitem__(self, key):
        if not isinstance(key, slice) or key.step not in (None, 1):
            raise TypeError("only contiguous slices are supported")
        n = np.shape(self.value)[0]
        start, stop, _ = key.indices(n)
        return self.tape._push("slice", (self.idx,), self.value[start:stop], (start, stop))

    # -- elementwise functions ----------------------------------------------

    def tanh(self):
        return self.tape._push("tanh", (self.idx,), np.tanh(self.value), None)

    def sin(self):
        return self.tape._push("sin", (self.idx,), np.sin(self.value), None)

    def cos(self):
        return self.tape._push("cos", (self.idx,), np.cos(self.value), None)

    def exp(self):
        return self.tape._push("exp", (self.idx,), np.exp(self.value), None)

    # -- reductions / shape -------------------------------------------------

    def sum(self):
        return self.tape._push("sum", (self.idx,), np.sum(self.value), None)

    def mean(self):
        return self.tape._push("mean", (self.idx,), np.mean(self.value), None)

    def reshape(self, shape):
        return self.tape._push("reshape", (self.idx,), np.reshape(self.value, shape), None)


def _as_value(x):
    if isinstance(x, (int, float)):
        return float(x)
    return np.asarray(x, dtype=np.float64)


# -- forward-mode jets -------------------------------------------------------
#
# Components of a jet are floats, arrays, or Vars; a literal float zero marks
# a structurally absent derivative so constant seeds cost nothing.


def _is0(c):
    return type(c) is float and c == 0.0


def _cadd(a, b):
    if _is0(a):
        return b
    if _is0(b):
        return a
    return a + b


def _csub(a, b):
    if _is0(b):
        return a
    if _is0(a):
        return -b
    return a - b


def _cmul(a, b):
    if _is0(a) or _is0(b):
        return 0.0
    return a * b


def _cneg(a):
    if _is0(a):
        return 0.0
    return -a


def _ctanh(c):
    if isinstance(c, Var):
        return c.tanh()
    return np.tanh(c) if isinstance(c, np.ndarray) else math.tanh(c)


def _csin(c):
    if isinstance(c, Var):
        return c.sin()
    return np.sin(c) if isinstance(c, np.ndarray) else math.sin(c)


def _ccos(c):
    if isinstance(c, Var):
        return c.cos()
    return np.cos(c) if isinstance(c, np.ndarray) else math.cos(c)


def _cexp(c):
    if isinstance(c, Var):
        return c.exp()
    return np.exp(c) if isinstance(c, np.ndarray) else math.exp(c)


def _cmatmul(a, b):
    return a @ b


class Dual1:
    """First-order jet: value and first derivative along one seed direction."""

    __slots__ = ("v", "d1")
    __array_ufunc__ = None

    def __init__(self, v, d1=0.0):
        self.v = v
        self.d1 = d1

    @staticmethod
    def _lift(x):
        if isinstance(x, Dual1):
            return x
        if isinstance(x, Dual2):
            raise TypeError("cannot mix first- and second-order jets")
        return Dual1(_jet_component(x))

    def __add__(self, other):
        o = Dual1._lift(other)
        return Dual1(self.v + o.v, _cadd(self.d1, o.d1))

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual1._lift(other)
        return Dual1(self.v - o.v, _csub(self.d1, o.d1))

    def __rsub__(self, other):
        return Dual1._lift(other).__sub__(self)

    def __mul__(self, other):
        o = Dual1._lift(other)
        return Dual1(
            self.v * o.v,
            _cadd(_cmul(self.d1, o.v), _cmul(self.v, o.d1)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual1._lift(other)
        q = self.v / o.v
        return Dual1(q, _csub(self.d1, _cmul(q, o.d1)) / o.v)

    def __rtruediv__(self, other):
        return Dual1._lift(other).__truediv__(self)

    def __neg__(self):
        return Dual1(-self.v, _cneg(self.d1))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        return Dual1(self.v ** p, _cmul(p * self.v ** (p - 1.0), self.d1))

    def __matmul__(self, m):
        return Dual1(_cmatmul(self.v, m), _cmatmul(self.d1, m) if not _is0(self.d1) else 0.0)

    def tanh(self):
        y = _ctanh(self.v)
        return Dual1(y, _cmul(1.0 - y * y, self.d1))

    def sin(self):
        return Dual1(_csin(self.v), _cmul(_ccos(self.v), self.d1))

    def cos(self):
        return Dual1(_ccos(self.v), _cneg(_cmul(_csin(self.v), self.d1)))

    def exp(self):
        y = _cexp(self.v)
        return Dual1(y, _cmul(y, self.d1))


class Dual2:
    """Second-order jet along one seed direction.

    Carries (value, first derivative, second derivative); composition follows
    the second-order Taylor rule ``(g o f)'' = g''(f) f'^2 + g'(f) f''``.
    """

    __slots__ = ("v", "d1", "d2")
    __array_ufunc__ = None

    def __init__(self, v, d1=0.0, d2=0.0):
        self.v = v
        self.d1 = d1
        self.d2 = d2

    @staticmethod
    def _lift(x):
        if isinstance(x, Dual2):
            return x
        if isinstance(x, Dual1):
            raise TypeError("cannot mix first- and second-order jets")
        return Dual2(_jet_component(x))

    def __add__(self, other):
        o = Dual2._lift(other)
        return Dual2(self.v + o.v, _cadd(self.d1, o.d1), _cadd(self.d2, o.d2))

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual2._lift(other)
        return Dual2(self.v - o.v, _csub(self.d1, o.d1), _csub(self.d2, o.d2))

    def __rsub__(self, other):
        return Dual2._lift(other).__sub__(self)

    def __mul__(self, other):
        o = Dual2._lift(other)
        d1 = _cadd(_cmul(self.d1, o.v), _cmul(self.v, o.d1))
        cross = _cmul(self.d1, o.d1)
        d2 = _cadd(
            _cadd(_cmul(self.d2, o.v), _cmul(self.v, o.d2)),
            0.0 if _is0(cross) else 2.0 * cross,
        )
        return Dual2(self.v * o.v, d1, d2)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual2._lift(other)
        q = self.v / o.v
        q1 = _csub(self.d1, _cmul(q, o.d1)) / o.v
        cross = _cmul(q1, o.d1)
        q2 = _csub(_csub(self.d2, 0.0 if _is0(cross) else 2.0 * cross), _cmul(q, o.d2)) / o.v
        return Dual2(q, q1, q2)

    def __rtruediv__(self, other):
        return Dual2._lift(other).__truediv__(self)

    def __neg__(self):
        return Dual2(-self.v, _cneg(self.d1), _cneg(self.d2))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        f1 = p * self.v ** (p - 1.0)
        d1 = _cmul(f1, self.d1)
        d2 = _cadd(
            _cmul(f1, self.d2),
            _cmul(p * (p - 1.0) * self.v ** (p - 2.0), _cmul(self.d1, self.d1)),
        )
        return Dual2(self.v ** p, d1, d2)

    def __matmul__(self, m):
        return Dual2(
            _cmatmul(self.v, m),
            _cmatmul(self.d1, m) if not _is0(self.d1) else 0.0,
            _cmatmul(self.d2, m) if not _is0(self.d2) else 0.0,
        )

    def tanh(self):
        y = _ctanh(self.v)
        s = 1.0 - y * y
        d1 = _cmul(s, self.d1)
        # second order: s*d2 - 2*y*(s*d1)*d1 along the seed
        curv = _cmul(y, _cmul(self.d1, d1))
        d2 = _csub(_cmul(s, self.d2), 0.0 if _is0(curv) else 2.0 * curv)
        return Dual2(y, d1, d2)

    def sin(self):
        sv = _csin(self.v)
        cv = _ccos(self.v)
        d1 = _cmul(cv, self.d1)
        d2 = _csub(_cmul(cv, self.d2), _cmul(sv, _cmul(self.d1, self.d1)))
        return Dual2(sv, d1, d2)

    def cos(self):
        sv = _csin(self.v)
        cv = _ccos(self.v)
        d1 = _cneg(_cmul(sv, self.d1))
        d2 = _cneg(_cadd(_cmul(sv, self.d2), _cmul(cv, _cmul(self.d1, self.d1))))
        return Dual2(cv, d1, d2)

    def exp(self):
        y = _cexp(self.v)
        return Dual2(
            y,
            _cmul(y, self.d1),
            _cmul(y, _cadd(self.d2, _cmul(self.d1, self.d1))),
        )


def _jet_component(x):
    if isinstance(x, Var):
        return x
    if isinstance(x, (int, float)):
        return float(x)
    return np.asarray(x, dtype=np.float64)


_JET_TYPES = (Dual1, Dual2)


# -- public entry points ------------------------------------------------------


def grad(loss_fn, params):
    """Evaluate ``loss_fn`` at ``params`` and return ``(value, gradient)``.

    ``loss_fn`` maps a ``Var`` holding the flat parameter vector to a scalar
    ``Var`` built from supported primitives.  The gradient is exact to
    floating-point rounding.  Raises :class:`NumericalFailure` if evaluation
    or the reverse sweep produces a non-finite value.
    """
    p = np.asarray(params, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("params must be a flat vector")
    if not np.isfinite(p).all():
        raise ValueError("params must be finite")
    tape = Tape()
    w = tape.variable(p)
    with np.errstate(all="ignore"):
        out = loss_fn(w)
        if not isinstance(out, Var):
            raise TypeError("loss_fn must return a taped scalar")
        val = out.value
        if np.size(val) != 1:
            raise ValueError("loss_fn must return a scalar")
        val = float(np.reshape(np.asarray(val), ()))
        if not math.isfinite(val):
            raise NumericalFailure(tape.first_nonfinite(out.idx) or "output", "loss is non-finite")
        g = tape.backward(out, w)
    if not np.isfinite(g).all():
        kind = tape.first_nonfinite(out.idx)
        raise NumericalFailure(kind or "backward", "gradient is non-finite")
    return val, g


def input_derivatives(f, x, t):
    """Input derivatives of a two-argument scalar function.

    Returns ``(u, du_dt, du_dx, d2u_dx2)``: the time derivative comes from a
    first-order pass seeded on ``t``, the spatial derivatives from one
    second-order pass seeded on ``x``.  ``f`` must be written in jet
    arithmetic; ``x`` and ``t`` may be floats or aligned arrays.
    """
    with np.errstate(all="ignore"):
        ux = f(Dual2(_jet_component(x), 1.0, 0.0), Dual2(_jet_component(t)))
        ut = f(Dual1(_jet_component(x)), Dual1(_jet_component(t), 1.0))
    out = (ux.v, ut.d1, ux.d1, ux.d2)
    for part in out:
        if isinstance(part, Var):
            continue
        arr = np.asarray(part, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericalFailure("dual-forward", "input derivative is non-finite")
    return out
