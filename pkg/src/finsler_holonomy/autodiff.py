"""Nested forward-mode differentiation.

A :class:`DiffScalar` is a first-order dual number ``value + deriv * eps_tag``.
Towers are built by nesting: ``value`` and ``deriv`` may themselves be
``DiffScalar`` instances carrying older (smaller) tags.  Every call to
:func:`derivative` draws a fresh tag, so derivatives taken inside functions
that are themselves being differentiated never get confused.

Leaves may be Python floats or numpy arrays; arrays broadcast through the
whole tower, which is how sample sets are evaluated in one pass.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from numbers import Real

import numpy as np

__all__ = [
    "DiffScalar",
    "DepthCapError",
    "DomainError",
    "DEFAULT_DEPTH_CAP",
    "depth_cap",
    "get_depth_cap",
    "raised_depth_cap",
    "derivative",
    "jvp",
    "directional_derivative",
    "jacobian",
    "gradient",
    "primal",
    "base_value",
    "sqrt",
    "exp",
    "log",
    "sin",
    "cos",
    "tan",
    "arcsin",
    "arccos",
    "arctan",
    "arctan2",
    "rpow",
]

DEFAULT_DEPTH_CAP = 6

_tags = itertools.count(1)
_cap = contextvars.ContextVar("depth_cap", default=DEFAULT_DEPTH_CAP)
_level = contextvars.ContextVar("nesting_level", default=0)


class DepthCapError(ValueError):
    """Raised when a derivative request would nest deeper than the cap."""


class DomainError(ArithmeticError):
    """Raised when a function is evaluated outside its real domain."""


def get_depth_cap() -> int:
    return _cap.get()


@contextlib.contextmanager
def depth_cap(cap: int):
    """Temporarily set the nesting cap."""
    if cap < 0:
        raise DepthCapError(f"depth cap must be non-negative, got {cap}")
    token = _cap.set(int(cap))
    try:
        yield
    finally:
        _cap.reset(token)


@contextlib.contextmanager
def raised_depth_cap(extra: int):
    """Allow ``extra`` more nesting levels inside the block.

    Used by code that spends a fixed number of internal derivative orders
    (the fundamental tensor spends two) so that the user-facing cap counts
    only the orders the caller asked for.
    """
    token = _cap.set(_cap.get() + int(extra))
    try:
        yield
    finally:
        _cap.reset(token)


@contextlib.contextmanager
def _nested():
    level = _level.get() + 1
    if level > _cap.get():
        raise DepthCapError(
            f"derivative nesting depth {level} exceeds the cap {_cap.get()}"
        )
    token = _level.set(level)
    try:
        yield
    finally:
        _level.reset(token)


class DiffScalar:
    """First-order dual number tagged by its seed.

    Parameters
    ----------
    tag : int
        Identifier of the infinitesimal.  Larger tags are newer and sit
        further out in a tower.
    value, deriv : float, ndarray or DiffScalar
        Primal and tangent parts.  Any ``DiffScalar`` inside them carries a
        smaller tag.
    """

    __slots__ = ("tag", "value", "deriv")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tag, value, deriv):
        self.tag = tag
        self.value = value
        self.deriv = deriv

    def __repr__(self):
        return f"DiffScalar(tag={self.tag}, value={self.value!r}, deriv={self.deriv!r})"

    # arithmetic ---------------------------------------------------------

    def _outer(self, other):
        """True when ``other`` must be treated as a constant at this level."""
        return not isinstance(other, DiffScalar) or other.tag < self.tag

    def __add__(self, other):
        if self._outer(other):
            return DiffScalar(self.tag, self.value + other, self.deriv)
        if other.tag == self.tag:
            return DiffScalar(self.tag, self.value + other.value, self.deriv + other.deriv)
        return other.__radd__(self)

    def __radd__(self, other):
        return DiffScalar(self.tag, other + self.value, self.deriv)

    def __sub__(self, other):
        if self._outer(other):
            return DiffScalar(self.tag, self.value - other, self.deriv)
        if other.tag == self.tag:
            return DiffScalar(self.tag, self.value - other.value, self.deriv - other.deriv)
        return other.__rsub__(self)

    def __rsub__(self, other):
        return DiffScalar(self.tag, other - self.value, -self.deriv)

    def __neg__(self):
        return DiffScalar(self.tag, -self.value, -self.deriv)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if self._outer(other):
            return DiffScalar(self.tag, self.value * other, self.deriv * other)
        if other.tag == self.tag:
            return DiffScalar(
                self.tag,
                self.value * other.value,
                self.value * other.deriv + self.deriv * other.value,
            )
        return other.__rmul__(self)

    def __rmul__(self, other):
        return DiffScalar(self.tag, other * self.value, other * self.deriv)

    def __truediv__(self, other):
        if self._outer(other):
            return DiffScalar(self.tag, self.value / other, self.deriv / other)
        if other.tag == self.tag:
            q = self.value / other.value
            return DiffScalar(self.tag, q, (self.deriv - q * other.deriv) / other.value)
        return other.__rtruediv__(self)

    def __rtruediv__(self, other):
        q = other / self.value
        return DiffScalar(self.tag, q, -q * self.deriv / self.value)

    def __pow__(self, exponent):
        if isinstance(exponent, DiffScalar):
            return exp(exponent * log(self))
        if isinstance(exponent, int) or (isinstance(exponent, Real) and float(exponent).is_integer()):
            n = int(exponent)
            if n == 0:
                return DiffScalar(self.tag, self.value ** 0, self.deriv * 0)
            if n == 1:
                return self
            if n == 2:
                return self * self
            return DiffScalar(self.tag, self.value ** n, n * self.value ** (n - 1) * self.deriv)
        _require(base_value(self.value) > 0, "power with non-integer exponent needs a positive base", self)
        return DiffScalar(
            self.tag,
            self.value ** exponent,
            exponent * self.value ** (exponent - 1) * self.deriv,
        )

    def __rpow__(self, base):
        return exp(self * log(base))

    def __matmul__(self, other):
        if self._outer(other):
            return DiffScalar(self.tag, self.value @ other, self.deriv @ other)
        if other.tag == self.tag:
            return DiffScalar(
                self.tag,
                self.value @ other.value,
                self.value @ other.deriv + self.deriv @ other.value,
            )
        return other.__rmatmul__(self)

    def __rmatmul__(self, other):
        return DiffScalar(self.tag, other @ self.value, other @ self.deriv)

    # comparisons use the underlying real value --------------------------

    def __lt__(self, other):
        return base_value(self) < base_value(other)

    def __le__(self, other):
        return base_value(self) <= base_value(other)

    def __gt__(self, other):
        return base_value(self) > base_value(other)

    def __ge__(self, other):
        return base_value(self) >= base_value(other)

    def __float__(self):
        return float(base_value(self))

    @property
    def shape(self):
        return np.shape(base_value(self))


def base_value(x):
    """Innermost real value of a (possibly nested) carrier."""
    while isinstance(x, DiffScalar):
        x = x.value
    return x


def _require(ok, message, arg):
    if not np.all(ok):
        raise DomainError(f"{message} (argument value {base_value(arg)!r})")


# elementary functions --------------------------------------------------------


def sqrt(x):
    if isinstance(x, DiffScalar):
        r = sqrt(x.value)
        return DiffScalar(x.tag, r, x.deriv / (2 * r))
    _require(np.asarray(x) >= 0, "sqrt of a negative number", x)
    return np.sqrt(x)


def exp(x):
    if isinstance(x, DiffScalar):
        e = exp(x.value)
        return DiffScalar(x.tag, e, e * x.deriv)
    return np.exp(x)


def log(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, log(x.value), x.deriv / x.value)
    _require(np.asarray(x) > 0, "log of a non-positive number", x)
    return np.log(x)


def sin(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, sin(x.value), cos(x.value) * x.deriv)
    return np.sin(x)


def cos(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, cos(x.value), -sin(x.value) * x.deriv)
    return np.cos(x)


def tan(x):
    if isinstance(x, DiffScalar):
        t = tan(x.value)
        return DiffScalar(x.tag, t, (1 + t * t) * x.deriv)
    return np.tan(x)


def arcsin(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, arcsin(x.value), x.deriv / sqrt(1 - x.value * x.value))
    _require(np.abs(np.asarray(x)) <= 1, "arcsin outside [-1, 1]", x)
    return np.arcsin(x)


def arccos(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, arccos(x.value), -x.deriv / sqrt(1 - x.value * x.value))
    _require(np.abs(np.asarray(x)) <= 1, "arccos outside [-1, 1]", x)
    return np.arccos(x)


def arctan(x):
    if isinstance(x, DiffScalar):
        return DiffScalar(x.tag, arctan(x.value), x.deriv / (1 + x.value * x.value))
    return np.arctan(x)


def arctan2(y, x):
    outer = max(
        (a for a in (y, x) if isinstance(a, DiffScalar)),
        key=lambda a: a.tag,
        default=None,
    )
    if outer is None:
        return np.arctan2(y, x)
    t = outer.tag
    yv, yd = _split(y, t)
    xv, xd = _split(x, t)
    return DiffScalar(t, arctan2(yv, xv), (xv * yd - yv * xd) / (xv * xv + yv * yv))


def rpow(x, exponent):
    """``x ** exponent`` for a real (non-integer) exponent, positive base."""
    if isinstance(x, DiffScalar):
        return x ** exponent
    _require(np.asarray(x) > 0, "power with non-integer exponent needs a positive base", x)
    return np.power(x, exponent)


def _split(x, tag):
    if isinstance(x, DiffScalar) and x.tag == tag:
        return x.value, x.deriv
    return x, 0.0


# extraction ------------------------------------------------------------------


def _tangent(x, tag):
    if isinstance(x, DiffScalar):
        if x.tag == tag:
            return x.deriv
        if x.tag > tag:
            return DiffScalar(x.tag, _tangent(x.value, tag), _tangent(x.deriv, tag))
        return 0.0
    if isinstance(x, (list, tuple)):
        return type(x)(_tangent(xi, tag) for xi in x)
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.array([_tangent(xi, tag) for xi in x.flat], dtype=object).reshape(x.shape)
    return 0.0 * np.asarray(x) if isinstance(x, np.ndarray) else 0.0


def primal(x, tag):
    """Strip the ``tag`` infinitesimal from ``x``."""
    if isinstance(x, DiffScalar):
        if x.tag == tag:
            return x.value
        if x.tag > tag:
            return DiffScalar(x.tag, primal(x.value, tag), primal(x.deriv, tag))
        return x
    if isinstance(x, (list, tuple)):
        return type(x)(primal(xi, tag) for xi in x)
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.array([primal(xi, tag) for xi in x.flat], dtype=object).reshape(x.shape)
    return x


def _is_zero(d):
    return not isinstance(d, (DiffScalar, np.ndarray)) and d == 0


def jvp(f, p, direction):
    """Return ``(f(p), D_direction f(p))`` for a function of a point sequence.

    ``p`` and ``direction`` are sequences of equal length whose entries are
    carriers (float, ndarray or DiffScalar).  ``f`` takes a list and may
    return a carrier or a (nested) list/tuple of carriers.
    """
    if len(p) != len(direction):
        raise ValueError(f"point has {len(p)} coordinates, direction has {len(direction)}")
    tag = next(_tags)
    with _nested():
        seeded = [pi if _is_zero(di) else DiffScalar(tag, pi, di) for pi, di in zip(p, direction)]
        out = f(seeded)
    return primal(out, tag), _tangent(out, tag)


def derivative(f, p, direction):
    """Directional derivative ``D_direction f(p)`` (one nesting level)."""
    return jvp(f, p, direction)[1]


def directional_derivative(f, p, dirs):
    """Mixed directional derivative ``D_{dirs[-1]} ... D_{dirs[0]} f(p)``.

    ``f`` takes a sequence of reals.  Each entry of ``dirs`` is a direction
    vector of the same length as ``p``.
    """
    dirs = [[float(v) for v in d] for d in dirs]
    if len(dirs) > get_depth_cap() - _level.get():
        raise DepthCapError(
            f"{len(dirs)} nested directions requested, cap is {get_depth_cap()}"
        )
    p = [float(v) if np.ndim(v) == 0 and not isinstance(v, DiffScalar) else v for v in p]

    def nest(k):
        if k == 0:
            return f
        inner = nest(k - 1)
        d = dirs[k - 1]
        return lambda q: derivative(inner, q, d)

    return nest(len(dirs))(list(p))


def jacobian(f, p):
    """Jacobian ``J[i, j] = d f_i / d p_j``.

    A float array for real inputs; an object array when ``p`` holds
    carriers, so jacobians nest (e.g. the Hessian as a jacobian of a
    gradient).
    """
    if any(isinstance(v, DiffScalar) for v in p):
        p = list(p)
    else:
        p = [float(v) for v in np.asarray(p, dtype=float).ravel()]
    n = len(p)
    cols = []
    for j in range(n):
        e = [0.0] * n
        e[j] = 1.0
        col = derivative(f, p, e)
        cols.append(np.atleast_1d(np.asarray(col, dtype=object)))
    J = np.column_stack(cols)
    if any(isinstance(v, DiffScalar) for v in J.ravel()):
        return J
    return J.astype(float)


def gradient(f, p):
    """Gradient of a scalar function as a float array."""
    return jacobian(lambda q: [f(q)], p)[0]

