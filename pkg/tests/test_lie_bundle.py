import math

import numpy as np
import pytest

from finsler_holonomy import FinslerSpace
from finsler_holonomy import holonomy_algebra as ha
from finsler_holonomy import lie_bundle as lb
from finsler_holonomy.transport import Curve

CURVES = [
    Curve.segment([-0.5, -0.4], [0.6, 0.3]),
    Curve.polyline([[0.0, 0.0], [0.5, 0.2], [0.1, 0.7], [-0.4, 0.1]]),
    Curve.polyline([[-0.3, 0.5], [0.2, -0.6], [0.7, 0.1]], smooth=False),
]


def test_levi_civita():
    eps = lb.levi_civita()
    assert eps[0, 1, 2] == 1 and eps[0, 2, 1] == -1 and eps[1, 2, 0] == 1
    assert np.count_nonzero(eps) == 6
    assert lb.jacobi_residual(lb.so3_ad_model(), [0.1, 0.2]) < 1e-14


def test_zero_connection_is_identity():
    model = lb.LieAlgebraBundleModel([-1, -1], [1, 1], 3, lambda x: lb.levi_civita(), lambda x: np.zeros((2, 3, 3)))
    pf = lb.parallel_frame(model, CURVES[1])
    assert np.max(np.abs(pf.transport_matrix - np.eye(3))) < 1e-14


def test_scalar_model_matches_exponential():
    k = 0.7
    model = lb.scalar_model(k)
    pf = lb.parallel_frame(model, Curve.segment([0.0], [1.0]))
    for t, lam in zip(pf.t, pf.lam):
        assert abs(lam[0, 0] - math.exp(-k * t)) < 1e-10


@pytest.mark.parametrize("c", CURVES)
def test_frame_is_parallel(c):
    model = lb.so3_ad_model()
    assert lb.parallel_frame_residual(model, c, times=(0.2, 0.45, 0.8)) < 1e-8


def test_reversed_roundtrip():
    model = lb.so3_ad_model()
    for c in CURVES:
        fwd = lb.parallel_frame(model, c).transport_matrix
        back = lb.parallel_frame(model, c.reversed()).transport_matrix
        assert np.max(np.abs(back @ fwd - np.eye(3))) < 1e-8


def test_lie_connection_preserves_brackets():
    model = lb.so3_ad_model()
    rng = np.random.default_rng(3)
    for x in model.random_points(rng, 4):
        for i in range(2):
            assert lb.lie_connection_residual(model, x, i) < 1e-12
    for c in CURVES:
        assert lb.transport_bracket_check(model, c) < 1e-8
        assert lb.structure_constant_drift(model, c) < 1e-8


def test_non_derivation_fails_both():
    model = lb.non_derivation_model()
    assert lb.lie_connection_residual(model, [0.0, 0.0], 0) >= 1.0 - 1e-12
    assert lb.lie_connection_residual(model, [0.0, 0.0], 1) == 0
    assert lb.transport_bracket_check(model, CURVES[0]) > 1e-3
    assert lb.structure_constant_drift(model, CURVES[0]) > 1e-3


def test_constant_curve_trivial():
    model = lb.non_derivation_model()
    c = Curve.constant([0.2, 0.3])
    assert lb.transport_bracket_check(model, c) == 0
    assert lb.structure_constant_drift(model, c) == 0


def test_parallel_subbundles_intersection_rank():
    model = lb.so3_plus_line_model()
    for c in CURVES:
        pf = lb.parallel_frame(model, c)
        for lam in pf.lam:
            A, B = lam[:, :3], lam[:, 2:4]
            # dim(A cap B) = dim A + dim B - dim(A + B)
            cap = 3 + 2 - np.linalg.matrix_rank(np.hstack([A, B]), tol=1e-8)
            assert cap == 1
        lam = pf.transport_matrix
        # transported span{e1..e3} is again span{e1..e3}: e4 component vanishes
        assert np.max(np.abs(lam[3, :3])) < 1e-10
        assert lb.transport_bracket_check(model, c) < 1e-8


def test_degenerate_frame_raises():
    model = lb.scalar_model(30.0)
    with pytest.raises(lb.FrameDegenerateError) as err:
        lb.parallel_frame(model, Curve.segment([0.0], [1.0]))
    assert 0.5 < err.value.t_valid < 1.0


def test_singular_initial_frame():
    with pytest.raises(ValueError):
        lb.parallel_frame(lb.so3_ad_model(), CURVES[0], np.zeros((3, 3)))


def test_ray_frame():
    model = lb.so3_ad_model()
    frame = lb.ray_frame(model, [0.0, 0.0])
    assert np.array_equal(frame([0.0, 0.0]), np.eye(3))
    F = frame([0.4, -0.3])
    assert abs(np.linalg.det(F) - 1.0) < 1e-9
    assert np.max(np.abs(F.T @ F - np.eye(3))) < 1e-9


def test_model_shape_checks():
    with pytest.raises(ValueError):
        lb.LieAlgebraBundleModel([0], [1], 2, lambda x: np.zeros((2, 2, 2)), lambda x: np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        lb.LieAlgebraBundleModel([0], [1], 2, lambda x: np.zeros((3, 3, 3)), lambda x: np.zeros((1, 2, 2)))


def test_model_from_config():
    assert lb.model_from_config({"fixture": "so3-ad"}).n == 3
    assert lb.model_from_config({"fixture": "scalar", "params": {"k": 2.0}}).K([0.0])[0, 0, 0] == 2.0
    with pytest.raises(ValueError):
        lb.model_from_config({"fixture": "nope"})
    cfg = {"lower": [0], "upper": [1], "n": 1, "C": [[[0]]], "K": [[["0.5 + x1"]]]}
    model = lb.model_from_config(cfg)
    assert abs(model.K([0.25])[0, 0, 0] - 0.75) < 1e-15
    pf = lb.parallel_frame(model, Curve.segment([0.0], [1.0]))
    assert abs(pf.transport_matrix[0, 0] - math.exp(-1.0)) < 1e-10


def test_frame_from_holonomy():
    S = FinslerSpace.builtin("sphere2")
    x = [1.0, 1.0]
    hf = lb.frame_from_holonomy(S, x, ha.ck_generators(S, x, 3))
    assert hf.rank == 1 and len(hf.basis) == 1 and np.max(np.abs(hf.C)) < 1e-12
    E = FinslerSpace.builtin("euclidean")
    assert lb.frame_from_holonomy(E, [0, 0], ha.ck_generators(E, [0, 0], 3)).rank == 0
    E3 = FinslerSpace.builtin("euclidean", dim=3)
    rot = [
        ha.FunctionField(lambda x, u, a=a: _cross(u, a), f"rot{a}")
        for a in range(3)
    ]
    hf = lb.frame_from_holonomy(E3, [0, 0, 0], rot)
    assert hf.rank == 3 and hf.residual < 1e-12
    assert np.max(np.abs(hf.C - lb.levi_civita())) < 1e-12


def _cross(u, a):
    e = [0.0, 0.0, 0.0]
    e[a] = 1.0
    return [u[1] * e[2] - u[2] * e[1], u[2] * e[0] - u[0] * e[2], u[0] * e[1] - u[1] * e[0]]
