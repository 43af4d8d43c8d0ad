import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler_holonomy import autodiff as ad
from finsler_holonomy.metric_expr import (
    CATALOG,
    ArityError,
    BinOp,
    Call,
    EvaluationError,
    ExprSyntaxError,
    MetricSpec,
    Pow,
    UnknownIdentifierError,
    Var,
    builtin,
    check_homogeneity,
    compile_expr,
    evaluate,
    parse,
    to_text,
)


def test_parse_structure():
    e = parse("sqrt(u1^2 + u2^2)")
    assert isinstance(e, Call) and e.func == "sqrt"
    assert isinstance(e.arg, BinOp) and e.arg.op == "+"
    assert isinstance(e.arg.left, Pow) and e.arg.left.base == Var("u1")
    parse("sqrt(u1^2 + sin(x1)^2 * u2^2)")


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("u1 +")
    assert info.value.offset == 4


def test_other_errors():
    with pytest.raises(UnknownIdentifierError):
        parse("abs(u1)")
    with pytest.raises(UnknownIdentifierError):
        parse("y1 + u1")
    with pytest.raises(ArityError):
        parse("sin(u1, u2)")
    with pytest.raises(EvaluationError):
        evaluate(parse("log(u1)"), {"u1": -1.0})


def test_evaluation_and_derivative():
    assert evaluate(parse("u1^2+u2^2"), {"u1": 3.0, "u2": 4.0}) == 25
    f = compile_expr(parse("sqrt(u1^2+u2^2)"), ["u1", "u2"])
    val, d = ad.jvp(f, [3.0, 4.0], [1.0, 0.0])
    assert val == 5 and d == pytest.approx(0.6, abs=1e-15)


def test_rational_power_and_pi():
    assert evaluate(parse("pow(u1, 1/4)"), {"u1": 16.0}) == pytest.approx(2.0)
    assert evaluate(parse("u1^(3/2)"), {"u1": 4.0}) == pytest.approx(8.0)
    assert evaluate(parse("cos(pi)"), {}) == pytest.approx(-1.0)


def test_homogeneity():
    rng = np.random.default_rng(0)
    samples = [(rng.uniform(-0.5, 0.5, 2), rng.normal(size=2), rng.uniform(0.1, 4)) for _ in range(100)]
    assert check_homogeneity(builtin("euclidean"), samples) < 1e-14
    assert check_homogeneity(builtin("randers"), samples) < 1e-12
    quad = MetricSpec("u1^2 + u2^2", 2, (-1, -1), (1, 1))
    r = check_homogeneity(quad, [((0, 0), (1.0, 0.0), 2.0)])
    assert r == pytest.approx(2.0)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_homogeneous(name):
    rng = np.random.default_rng(3)
    m = builtin(name)
    lo, hi = np.array(m.lower), np.array(m.upper)
    samples = [(lo + (hi - lo) * rng.uniform(0.1, 0.9, m.dim), rng.normal(size=m.dim), rng.uniform(0.2, 5))
               for _ in range(50)]
    assert check_homogeneity(m, samples) < 1e-12


# random grammar-valid expressions
leaf = st.one_of(
    st.sampled_from(["x1", "x2", "u1", "u2", "pi"]),
    st.integers(0, 9).map(str),
    st.floats(0.01, 9, allow_nan=False).map(lambda v: f"{v:.3f}"),
)


def _grow(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "sqrt", "log"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(children, st.sampled_from(["2", "3", "(1/2)", "(-2/3)"])).map(lambda t: f"({t[0]})^{t[1]}"),
    )


exprs = st.recursive(leaf, _grow, max_leaves=12)


@given(exprs)
@settings(max_examples=200)
def test_round_trip(text):
    e = parse(text)
    assert parse(to_text(e)) == e


@given(exprs)
@settings(max_examples=100)
def test_real_and_dual_evaluation_agree(text):
    names = ["x1", "x2", "u1", "u2"]
    f = compile_expr(parse(text), names)
    p = [0.3, 0.7, 1.1, 0.4]
    try:
        plain = f(p)
    except (EvaluationError, ArithmeticError, ZeroDivisionError, OverflowError):
        return
    dual, _ = ad.jvp(f, p, [0.0, 0.0, 1.0, 0.0])
    assert (plain == dual) or (math.isnan(plain) and math.isnan(dual))
