import math

import numpy as np
import pytest

from finsler_holonomy import FinslerSpace
from finsler_holonomy.holonomy_algebra import curvature_field, indicatrix_samples
from finsler_holonomy.integrate import IntegrationError, dopri5
from finsler_holonomy.transport import (
    Curve,
    f_drift,
    holonomy_angle,
    horizontal_lift,
    isometry_check,
    loop_holonomy_displacement,
    random_unit_curves,
    rho,
    rho_differential,
    spherical_triangle_loop,
    transport,
)


@pytest.fixture(scope="module")
def sphere():
    return FinslerSpace.builtin("sphere2")


@pytest.fixture(scope="module")
def randers():
    return FinslerSpace.builtin("randers")


def test_dopri5_exponential():
    y, stats, _ = dopri5(lambda t, y: -2 * y, 0.0, 1.0, np.array([1.0, 3.0]))
    np.testing.assert_allclose(y, np.exp(-2) * np.array([1.0, 3.0]), rtol=1e-9)
    assert stats.steps > 0 and stats.nfev >= 6 * stats.steps
    y, _, _ = dopri5(lambda t, y: np.cos(t) * y, 1.0, 0.0, np.array([1.0]))
    np.testing.assert_allclose(y, [np.exp(-math.sin(1.0))], rtol=1e-9)
    with pytest.raises(IntegrationError):
        dopri5(lambda t, y: y * y, 0.0, 2.0, np.array([1.0]))


def test_curves():
    c = Curve.polyline([[0, 0], [1, 0], [1, 1]])
    np.testing.assert_allclose(c(0.5), [1, 0])
    np.testing.assert_allclose(c.velocity(0.5), [0, 0], atol=1e-15)
    np.testing.assert_allclose(c.reversed()(0.0), [1, 1])
    e = Curve.from_expressions(["t", "t^2"])
    np.testing.assert_allclose(e.velocity(0.5), [1, 1])
    with pytest.raises(ValueError):
        Curve([lambda s: [s, 0.0 * s], lambda s: [2 + s, 0.0 * s]])


def test_euclidean_identity():
    E = FinslerSpace.builtin("euclidean")
    c = Curve.polyline([[-0.5, 0.0], [0.3, 0.4]])
    np.testing.assert_allclose(horizontal_lift(E, c, [1.0, 0.0]).point, [1.0, 0.0])
    res = transport(E, c, [0.3, 0.4], [np.array([1.0, 2.0])])
    np.testing.assert_allclose(res.vectors[0], [1.0, 2.0])
    np.testing.assert_allclose(loop_holonomy_displacement(E, [0, 0], 0, 1, 0.1, [1.0, 0.0]), 0, atol=1e-12)


def test_constant_curve(sphere):
    c = Curve.constant([1.0, 1.0])
    np.testing.assert_allclose(rho(sphere, c, [0.3, 0.5]), [0.3, 0.5], atol=1e-12)


def test_equator_geodesic(sphere):
    c = Curve.coordinate_arc([math.pi / 2, 0.5], 1, math.pi / 2)
    res = horizontal_lift(sphere, c, [0.0, 1.0])
    np.testing.assert_allclose(res.point, [0.0, 1.0], atol=1e-9)
    assert res.f_drift < 1e-9


@pytest.mark.parametrize("name", ["sphere2", "poincare-disk", "randers", "minkowski-quartic"])
def test_inverse_composition_homogeneity(name):
    S = FinslerSpace.builtin(name)
    rng = np.random.default_rng(5)
    c1, c2 = random_unit_curves(S, rng, 2)
    c2 = Curve.segment(c1.end, c1.end + 0.5 * (c2.end - c2.start) * 0.5)
    u0 = np.array([0.6, 0.5])
    u1 = rho(S, c1, u0)
    np.testing.assert_allclose(rho(S, c1.reversed(), u1), u0, atol=1e-8)
    np.testing.assert_allclose(rho(S, c1.then(c2), u0), rho(S, c2, u1), atol=1e-9)
    np.testing.assert_allclose(rho(S, c1, 2.5 * u0), 2.5 * u1, atol=1e-9)
    phi = lambda s: s * s
    np.testing.assert_allclose(rho(S, c1.reparametrized(phi), u0), u1, atol=1e-9)


def test_differential_is_derivative(randers):
    c = Curve.polyline([[-0.5, -0.2], [0.4, 0.5], [0.1, -0.3]])
    u0 = np.array([0.6, 0.5])
    V = np.array([0.3, -0.8])
    dV = rho_differential(randers, c, u0, V)
    errs = []
    for h in (1e-3, 1e-4):
        fd = (rho(randers, c, u0 + h * V, tol=1e-13) - rho(randers, c, u0, tol=1e-13)) / h
        errs.append(np.max(np.abs(fd - dV)))
    assert errs[1] < errs[0] and errs[1] < 1e-3
    np.testing.assert_allclose(rho_differential(randers, c, u0, 2 * V), 2 * dV, atol=1e-12)


def test_drift_and_isometry(sphere, randers):
    rng = np.random.default_rng(7)
    for c in random_unit_curves(sphere, rng, 5):
        assert f_drift(sphere, c, [0.5, 0.5]) < 1e-8
    coarse = max(f_drift(sphere, c, indicatrix_samples(sphere, c.start), tol=1e-4)
                 for c in random_unit_curves(sphere, rng, 4))
    assert coarse > 1e-6
    e = np.eye(2)
    pairs = [(e[0], e[0]), (e[0], e[1]), (e[1], e[1])]
    assert isometry_check(sphere, random_unit_curves(sphere, rng, 1)[0], [0.5, 0.5], pairs) < 1e-7
    worst = max(isometry_check(randers, c, [0.5, 0.5], pairs) for c in random_unit_curves(randers, rng, 5))
    assert worst > 1e-4


def test_gauss_bonnet_triangle(sphere):
    c, area = spherical_triangle_loop(0.8, 1.0, 0.7)
    u0 = np.array([0.3, 0.9])
    res = transport(sphere, c, u0, [np.array([1.0, 0.0])])
    assert holonomy_angle(sphere, c.start, u0, res.point) == pytest.approx(area, abs=1e-6)
    assert holonomy_angle(sphere, c.start, np.array([1.0, 0.0]), res.vectors[0]) == pytest.approx(area, abs=1e-6)
    g = np.diag([1.0, math.sin(0.8) ** 2])
    assert abs(res.vectors[0] @ g @ res.vectors[0] - 1.0) < 1e-7


def test_loop_matches_curvature(sphere):
    x = [math.pi / 2, 1.0]
    u0 = np.array([0.0, 1.0])
    R = curvature_field(sphere, x, 0, 1).at(sphere, x, u0)
    eps = 0.05
    d = loop_holonomy_displacement(sphere, x, 0, 1, eps, u0)
    assert np.linalg.norm(d + R) <= 5 * eps * np.linalg.norm(R)
