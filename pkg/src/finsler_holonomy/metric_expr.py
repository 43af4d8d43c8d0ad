"""A small expression language for Finsler functions.

Grammar (EBNF)::

    expr     = term { ("+" | "-") term } ;
    term     = unary { ("*" | "/") unary } ;
    unary    = "-" unary | power ;
    power    = atom [ "^" exponent ] ;
    exponent = number | "-" number | "(" [ "-" ] number [ "/" number ] ")" ;
    atom     = number | "pi" | variable | call | "(" expr ")" ;
    call     = ("sqrt" | "sin" | "cos" | "exp" | "log") "(" expr ")"
             | "pow" "(" expr "," ratio ")" ;
    ratio    = exponent | [ "-" ] number "/" number ;
    variable = ("x" | "u") digit { digit } ;     (or a caller-supplied name set)

Exponents are rationals.  Integer exponents accept any base; other
exponents take the principal branch and require a positive base.  There is
no ``abs`` and no conditional: Finsler functions must be smooth away from
the zero section, so norms are written as ``sqrt`` of a positive quantity.

Expressions evaluate generically over floats, numpy arrays and
:class:`~finsler_holonomy.autodiff.DiffScalar` towers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "Expr",
    "Num",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "EvaluationError",
    "parse",
    "to_text",
    "variables",
    "evaluate",
    "compile_expr",
    "MetricSpec",
    "builtin",
    "CATALOG",
    "check_homogeneity",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    def __init__(self, name: str, expected: int, got: int, offset: int):
        super().__init__(f"{name} takes {expected} argument(s), got {got} (offset {offset})")
        self.name = name
        self.offset = offset


class EvaluationError(ArithmeticError):
    """Domain violation during evaluation; ``subtree`` is the offending node."""

    def __init__(self, message: str, subtree: "Expr"):
        super().__init__(f"{message} in {to_text(subtree)}")
        self.subtree = subtree


# AST -------------------------------------------------------------------------


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Const(Expr):
    name: str


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Fraction


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


_FUNCS = {"sqrt": ad.sqrt, "sin": ad.sin, "cos": ad.cos, "exp": ad.exp, "log": ad.log}
_CONSTS = {"pi": math.pi}
_DEFAULT_VAR = re.compile(r"[xu][1-9][0-9]*\Z")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Callable[[str], bool]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.is_var = names

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value or kind == "end":
            raise ExprSyntaxError(f"expected {value!r}", pos)

    def parse(self):
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {v!r}", pos)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return Pow(base, self.exponent())
        return base

    def _number(self):
        kind, v, pos = self.take()
        if kind != "num":
            raise ExprSyntaxError("expected a number", pos)
        return Fraction(v)

    def exponent(self):
        kind, v, pos = self.peek()
        if (kind, v) == ("op", "-"):
            self.take()
            return -self._number()
        if (kind, v) == ("op", "("):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            q = self._number()
            if self.peek()[:2] == ("op", "/"):
                self.take()
                den = self._number()
                if den == 0:
                    raise ExprSyntaxError("zero denominator in exponent", self.tokens[self.i - 1][2])
                q = q / den
            self.expect(")")
            return sign * q
        if kind == "num":
            return self._number()
        raise ExprSyntaxError("exponent must be a rational constant", pos)

    def ratio(self):
        q = self.exponent()
        if self.peek()[:2] == ("op", "/") and self.tokens[self.i - 1][0] == "num":
            self.take()
            den = self._number()
            if den == 0:
                raise ExprSyntaxError("zero denominator in exponent", self.tokens[self.i - 1][2])
            q = q / den
        return q

    def atom(self):
        kind, v, pos = self.take()
        if kind == "num":
            return Num(float(v))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(v, pos)
            if v in _CONSTS:
                return Const(v)
            if self.is_var(v):
                return Var(v)
            raise UnknownIdentifierError(v, pos)
        if (kind, v) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos)
        raise ExprSyntaxError(f"unexpected {v!r}", pos)

    def call(self, name, pos):
        if name not in _FUNCS and name != "pow":
            raise UnknownIdentifierError(name, pos)
        self.expect("(")
        args = [self.expr()]
        exponent = None
        while self.peek()[:2] == ("op", ","):
            self.take()
            if name == "pow" and exponent is None and len(args) == 1:
                exponent = self.ratio()
                continue
            args.append(self.expr())
        self.expect(")")
        n_args = len(args) + (exponent is not None)
        expected = 2 if name == "pow" else 1
        if n_args != expected:
            raise ArityError(name, expected, n_args, pos)
        if name == "pow":
            return Pow(args[0], exponent)
        return Call(name, args[0])


def parse(text: str, names: Sequence[str] | None = None) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    By default the variables are ``x1, x2, ...`` and ``u1, u2, ...``.  Pass
    ``names`` to use a different, explicit variable set (curves use ``t``).
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    if names is None:
        is_var = lambda v: _DEFAULT_VAR.match(v) is not None  # noqa: E731
    else:
        allowed = frozenset(names)
        is_var = allowed.__contains__
    return _Parser(text, is_var).parse()


def _fmt_exponent(q: Fraction) -> str:
    if q.denominator == 1 and q >= 0:
        return str(q.numerator)
    return f"({q.numerator}/{q.denominator})"


def to_text(e: Expr) -> str:
    """Fully parenthesised text that re-parses to an equal tree."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, (Var, Const)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"{_atom_text(e.base)}^{_fmt_exponent(e.exponent)}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def _atom_text(e):
    text = to_text(e)
    if isinstance(e, (Var, Const, Call)) or (isinstance(e, (BinOp, Neg))):
        return text
    return f"({text})"


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, (Num, Const)):
        return set()
    if isinstance(e, (Neg, Call)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.left) | variables(e.right)


# evaluation ------------------------------------------------------------------


def _power(base, q: Fraction, node):
    if q.denominator == 1:
        n = q.numerator
        if n < 0:
            return 1.0 / _power(base, Fraction(-n), node)
        if isinstance(base, ad.DiffScalar):
            return base ** n
        return np.asarray(base, dtype=float) ** n if isinstance(base, np.ndarray) else float(base) ** n
    try:
        return ad.rpow(base, float(q))
    except ad.DomainError as exc:
        raise EvaluationError(str(exc), node) from None


def _compile(e: Expr, slot: Mapping[str, int]):
    if isinstance(e, Num):
        v = float(e.value)
        return lambda env: v
    if isinstance(e, Const):
        v = _CONSTS[e.name]
        return lambda env: v
    if isinstance(e, Var):
        k = slot[e.name]
        return lambda env: env[k]
    if isinstance(e, Neg):
        f = _compile(e.arg, slot)
        return lambda env: -f(env)
    if isinstance(e, BinOp):
        lf, rf = _compile(e.left, slot), _compile(e.right, slot)
        if e.op == "+":
            return lambda env: lf(env) + rf(env)
        if e.op == "-":
            return lambda env: lf(env) - rf(env)
        if e.op == "*":
            return lambda env: lf(env) * rf(env)

        def divide(env, node=e):
            den = rf(env)
            if np.any(ad.base_value(den) == 0):
                raise EvaluationError("division by zero", node)
            return lf(env) / den

        return divide
    if isinstance(e, Pow):
        bf = _compile(e.base, slot)
        q = e.exponent
        return lambda env, node=e: _power(bf(env), q, node)
    if isinstance(e, Call):
        af = _compile(e.arg, slot)
        fn = _FUNCS[e.func]

        def call(env, node=e):
            try:
                return fn(af(env))
            except ad.DomainError as exc:
                raise EvaluationError(str(exc), node) from None

        return call
    raise TypeError(f"not an expression node: {e!r}")


def compile_expr(e: Expr, names: Sequence[str]) -> Callable[[Sequence], object]:
    """Compile ``e`` into ``f(values)`` where ``values[k]`` binds ``names[k]``."""
    missing = variables(e) - set(names)
    if missing:
        raise UnknownIdentifierError(sorted(missing)[0], -1)
    return _compile(e, {n: k for k, n in enumerate(names)})


def evaluate(e: Expr, env: Mapping[str, object]):
    """Evaluate ``e`` with variables bound by ``env`` (any carrier type)."""
    names = list(env)
    return compile_expr(e, names)([env[n] for n in names])


# metric specifications ------------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    """A Finsler function given as an expression over ``x1..xm, u1..um``.

    ``lower``/``upper`` bound the open chart box.  ``name`` and ``params``
    record catalog provenance so a config can be echoed faithfully.
    """

    text: str
    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    name: str = "expression"
    params: tuple[tuple[str, object], ...] = field(default=())

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be at least 2, got {self.dim}")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("chart box bounds must have one entry per dimension")
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("chart box must be nonempty")
        allowed = set(self.coordinate_names)
        extra = variables(self.expr) - allowed
        if extra:
            raise UnknownIdentifierError(sorted(extra)[0], -1)

    @property
    def expr(self) -> Expr:
        return parse(self.text)

    @property
    def coordinate_names(self) -> list[str]:
        m = self.dim
        return [f"x{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(m)]

    def compile(self) -> Callable[[Sequence, Sequence], object]:
        f = compile_expr(self.expr, self.coordinate_names)
        return lambda x, u: f(list(x) + list(u))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > np.asarray(self.lower)) and np.all(x < np.asarray(self.upper)))

    def to_config(self) -> dict:
        if self.name != "expression":
            return {"builtin": self.name, **dict(self.params)}
        return {
            "expression": self.text,
            "dim": self.dim,
            "lower": list(self.lower),
            "upper": list(self.upper),
        }


def _euclidean(dim: int = 2):
    terms = " + ".join(f"u{i + 1}^2" for i in range(dim))
    return MetricSpec(f"sqrt({terms})", dim, (-1.0,) * dim, (1.0,) * dim, "euclidean", (("dim", dim),))


def _minkowski_quartic(dim: int = 2):
    terms = " + ".join(f"u{i + 1}^4" for i in range(dim))
    return MetricSpec(
        f"({terms})^(1/4)", dim, (-1.0,) * dim, (1.0,) * dim, "minkowski-quartic", (("dim", dim),)
    )


def _sphere2():
    return MetricSpec(
        "sqrt(u1^2 + sin(x1)^2 * u2^2)", 2, (0.0, 0.0), (math.pi, 2 * math.pi), "sphere2"
    )


def _poincare_disk():
    # a box inside the unit disk: corner radius 0.7*sqrt(2) < 1
    return MetricSpec(
        "2 * sqrt(u1^2 + u2^2) / (1 - x1^2 - x2^2)", 2, (-0.7, -0.7), (0.7, 0.7), "poincare-disk"
    )


def _randers(b1: str = "0.1 * x2", b2: str = "0"):
    for b in (b1, b2):
        extra = variables(parse(b)) - {"x1", "x2"}
        if extra:
            raise UnknownIdentifierError(sorted(extra)[0], -1)
    return MetricSpec(
        f"sqrt(u1^2 + u2^2) + ({b1}) * u1 + ({b2}) * u2",
        2,
        (-1.0, -1.0),
        (1.0, 1.0),
        "randers",
        (("b1", b1), ("b2", b2)),
    )


CATALOG: dict[str, Callable[..., MetricSpec]] = {
    "euclidean": _euclidean,
    "minkowski-quartic": _minkowski_quartic,
    "sphere2": _sphere2,
    "poincare-disk": _poincare_disk,
    "randers": _randers,
}


def builtin(name: str, **params) -> MetricSpec:
    """Catalog metric by name, e.g. ``builtin("randers", b1="0.1 * x2")``."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog metric {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


def check_homogeneity(metric: MetricSpec, samples) -> float:
    """Max of ``|F(x, lam*u) - lam*F(x, u)|`` over ``(x, u, lam)`` samples."""
    f = metric.compile()
    worst = 0.0
    for x, u, lam in samples:
        if lam <= 0:
            raise ValueError(f"homogeneity samples need lam > 0, got {lam}")
        x = [float(v) for v in x]
        u = [float(v) for v in u]
        r = abs(float(f(x, [lam * v for v in u])) - lam * float(f(x, u)))
        worst = max(worst, r)
    return worst
