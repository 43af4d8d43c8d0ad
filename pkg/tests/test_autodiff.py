import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler_holonomy import autodiff as ad
from finsler_holonomy import FinslerSpace

reals = st.floats(-3, 3, allow_nan=False)


def test_spec_examples():
    assert ad.directional_derivative(lambda p: p[0] ** 2, [3.0], [[1.0]]) == 6
    assert ad.directional_derivative(lambda p: p[0] ** 2, [3.0], [[1.0], [1.0]]) == 2
    assert ad.directional_derivative(lambda p: p[0] * p[1], [2.0, 5.0], [[1, 0], [0, 1]]) == 1
    J = ad.jacobian(lambda p: [p[0] ** 2, p[0] * p[1]], [1.0, 1.0])
    np.testing.assert_array_equal(J, [[2, 0], [1, 1]])
    np.testing.assert_array_equal(ad.jacobian(lambda p: list(p), [0.3, -2.0]), np.eye(2))


def test_gradient_of_euclidean_energy():
    E = FinslerSpace.builtin("euclidean")
    H = ad.jacobian(lambda u: ad.gradient(lambda v: E.energy([0.0, 0.0], v), u), [1.0, 0.0])
    np.testing.assert_allclose(H, 2 * np.eye(2), atol=1e-14)


def test_fourth_derivative():
    # d^4/dx^4 (x sin x) = x sin x - 4 cos x
    x = 0.7
    d4 = ad.directional_derivative(lambda p: p[0] * ad.sin(p[0]), [x], [[1.0]] * 4)
    assert d4 == pytest.approx(x * math.sin(x) - 4 * math.cos(x), abs=1e-13)


def test_perturbation_confusion():
    # d/dx [x * d/dy (x + y)] at x=1 must be 1, not 2
    def inner(q):
        x = q[0]
        return x * ad.derivative(lambda r: x + r[0], [1.0], [1.0])

    assert ad.derivative(inner, [1.0], [1.0]) == 1.0


def test_depth_cap():
    with ad.depth_cap(2):
        ad.directional_derivative(lambda p: p[0] ** 3, [1.0], [[1.0]] * 2)
        with pytest.raises(ad.DepthCapError):
            ad.directional_derivative(lambda p: p[0] ** 3, [1.0], [[1.0]] * 3)
    assert ad.get_depth_cap() == 6


def test_domain_errors():
    with pytest.raises(ad.DomainError):
        ad.log(-1.0)
    with pytest.raises(ad.DomainError):
        ad.sqrt(-0.5)


def test_array_leaves():
    x = np.linspace(0.1, 1.0, 5)
    d = ad.derivative(lambda p: ad.sin(p[0]) * p[0], [x], [1.0])
    np.testing.assert_allclose(d, np.cos(x) * x + np.sin(x), rtol=1e-14)


@given(reals, reals)
def test_depth_zero_matches_reals(a, b):
    f = lambda p: p[0] * p[1] + ad.sin(p[0]) - p[1] ** 3 + ad.exp(p[1] / 4)
    val, _ = ad.jvp(f, [a, b], [0.3, -0.2])
    assert val == f([a, b])


@given(reals, reals)
@settings(max_examples=40)
def test_mixed_partials_symmetric(a, b):
    f = lambda p: ad.sin(p[0] * p[1]) + p[0] ** 3 * ad.cos(p[1])
    dxy = ad.directional_derivative(f, [a, b], [[1, 0], [0, 1]])
    dyx = ad.directional_derivative(f, [a, b], [[0, 1], [1, 0]])
    assert abs(dxy - dyx) <= 1e-12 * max(1.0, abs(dxy))


@given(st.integers(0, 5), reals)
def test_polynomial_derivatives_exact(d, x):
    # x^5: d-th derivative is 5!/(5-d)! x^(5-d)
    got = ad.directional_derivative(lambda p: p[0] ** 5, [x], [[1.0]] * d)
    want = math.factorial(5) / math.factorial(5 - d) * x ** (5 - d)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", ["euclidean", "minkowski-quartic", "sphere2", "poincare-disk", "randers"])
def test_agrees_with_finite_differences(name):
    S = FinslerSpace.builtin(name)
    x = list(S.interior_grid(1)[0] + 0.05)
    u = [0.6, 0.5]
    z = x + u
    f = lambda p: S.energy(p[:2], p[2:])
    h = 1e-5
    rng = np.random.default_rng(1)
    d = rng.normal(size=4)
    e = rng.normal(size=4)
    fz = lambda p: float(f(list(p)))
    first = ad.derivative(f, z, list(d))
    fd1 = (fz(np.add(z, h * d)) - fz(np.subtract(z, h * d))) / (2 * h)
    assert abs(first - fd1) < 1e-6 * max(1, abs(first))
    second = ad.directional_derivative(f, z, [d, e])
    g = lambda p: ad.derivative(f, list(p), list(d))
    fd2 = (g(np.add(z, h * e)) - g(np.subtract(z, h * e))) / (2 * h)
    assert abs(second - fd2) < 1e-6 * max(1, abs(second))
