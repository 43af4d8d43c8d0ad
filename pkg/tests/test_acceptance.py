"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from finsler_holonomy import FinslerSpace, cli
from finsler_holonomy import holonomy_algebra as ha
from finsler_holonomy import lie_bundle as lb
from finsler_holonomy.finsler_core import berwald_coefficients, landsberg_residual
from finsler_holonomy.metric_expr import CATALOG
from finsler_holonomy.transport import (
    Curve,
    holonomy_angle,
    isometry_check,
    loop_holonomy_displacement,
    random_unit_curves,
    spherical_triangle_loop,
    transport,
)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return emit


def space(name):
    return FinslerSpace.builtin(name)


def test_c01_connection_matches_christoffel(report):
    t0 = time.perf_counter()
    S = space("sphere2")
    rng = np.random.default_rng(1)
    worst = 0.0
    for x in S.random_points(rng, 50):
        u = rng.normal(size=2)
        B = berwald_coefficients(S, x, u)
        want = np.zeros((2, 2, 2))
        want[0, 1, 1] = -math.sin(x[0]) * math.cos(x[0])
        want[1, 0, 1] = want[1, 1, 0] = 1 / math.tan(x[0])
        worst = max(worst, float(np.max(np.abs(B - want))))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-9 and elapsed < 5, f"max |B - Gamma| = {worst:.2e}, {elapsed:.2f} s")


def test_c02_f_constancy(report):
    rng = np.random.default_rng(2)
    drift = {}
    for name in CATALOG:
        S = space(name)
        worst = 0.0
        for c in random_unit_curves(S, rng, 20):
            worst = max(worst, transport(S, c, ha.indicatrix_samples(S, c.start, 4)).f_drift)
        drift[name] = worst
    S = space("sphere2")
    coarse = max(
        transport(S, c, ha.indicatrix_samples(S, c.start, 4), tol=1e-3).f_drift
        for c in random_unit_curves(S, rng, 4)
    )
    ok = max(drift.values()) < 1e-8 and coarse > 1e-6
    report(2, ok, f"max drift {max(drift.values()):.2e}, coarse self-test drift {coarse:.2e}")


def _landsberg_grid(S):
    xs = S.interior_grid(4)[:10]
    eye = np.eye(2)
    worst = 0.0
    for x in xs:
        for u in ha.indicatrix_samples(S, x, 16).T:
            for i in range(2):
                for a, b in ((0, 0), (0, 1), (1, 1)):
                    worst = max(worst, abs(landsberg_residual(S, x, u, eye[i], eye[a], eye[b])))
    return worst


def test_c03_landsberg_residual(report):
    res = {name: _landsberg_grid(space(name)) for name in ("sphere2", "poincare-disk", "randers")}
    ok = res["sphere2"] < 1e-8 and res["poincare-disk"] < 1e-8 and res["randers"] > 1e-3
    report(3, ok, ", ".join(f"{k} {v:.2e}" for k, v in res.items()))


def test_c04_transport_isometry(report):
    S = space("sphere2")
    rng = np.random.default_rng(4)
    worst = 0.0
    for c in random_unit_curves(S, rng, 10):
        pairs = [(rng.normal(size=2), rng.normal(size=2)) for _ in range(4)]
        worst = max(worst, isometry_check(S, c, ha.indicatrix_samples(S, c.start, 1)[:, 0], pairs))
    report(4, worst < 1e-7, f"max |g(rho V, rho W) - g(V, W)| = {worst:.2e}")


def test_c05_gauss_bonnet(report):
    S = space("sphere2")
    errs = []
    for theta_a, phi0, span in ((1.2, 0.5, 0.3), (0.8, 1.0, 0.7), (1.4, 0.2, 1.2)):
        c, area = spherical_triangle_loop(theta_a, phi0, span)
        assert c.inside(S)
        u0 = ha.indicatrix_samples(S, c.start, 1)[:, 0]
        angle = holonomy_angle(S, c.start, u0, transport(S, c, u0, tol=1e-12).point)
        errs.append(abs(angle - area))
    report(5, max(errs) < 1e-6, "angle - area errors " + ", ".join(f"{e:.1e}" for e in errs))


def test_c06_curvature_asymptotics(report):
    S = space("sphere2")
    x = [1.0, 1.0]
    u0 = np.array([0.3, 0.7])
    exact = ha.CurvatureGenerator(0, 1).at(S, x, u0)
    errs = [float(np.max(np.abs(loop_holonomy_displacement(S, x, 0, 1, e, u0) + exact))) for e in (0.1, 0.05, 0.025)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    report(6, all(1.7 <= r <= 2.3 for r in ratios), "ratios " + ", ".join(f"{r:.3f}" for r in ratios))


def test_c07_curvature_identity(report):
    rng = np.random.default_rng(7)
    fields = [
        ha.CurvatureGenerator(0, 1),
        ha.FunctionField(lambda x, u: [x[1] * u[1], u[0] + 0.5 * x[0] * u[1]], "linear"),
        ha.FunctionField(lambda x, u: [u[0] * u[1], u[1] * u[1] - u[0] * u[0]], "quadratic"),
    ]
    worst = {}
    for name in CATALOG:
        S = space(name)
        w = 0.0
        for n in range(50):
            x = S.random_points(rng, 1)[0]
            u = ha.indicatrix_samples(S, x, 1)[:, 0] * rng.uniform(0.5, 2.0)
            V = fields[n % 3] if n % 4 else ha.nabla(S, n % 2, fields[0])
            w = max(w, ha.curvature_identity_residual(S, x, u, 0, 1, V))
        worst[name] = w
    report(7, max(worst.values()) < 1e-7, f"max residual {max(worst.values()):.2e} over {len(CATALOG)} metrics")


@pytest.mark.parametrize(
    "name, rank", [("euclidean", 0), ("minkowski-quartic", 0), ("sphere2", 1), ("poincare-disk", 1)]
)
def test_c08_holonomy_dimensions(report, name, rank):
    t0 = time.perf_counter()
    S = space(name)
    x = S.interior_grid(1)[0] + 0.05
    reps = ha.ck_reports(S, x)
    last = reps[-1]
    elapsed = time.perf_counter() - t0
    ok = all(r.rank == rank for r in reps) and last.stabilized and last.extra["stabilized_at"] <= 4
    if rank:
        ok = ok and all(r.gap > 1e4 for r in reps)
    ok = ok and elapsed < 60
    report(8, ok, f"{name}: ranks {[r.rank for r in reps]}, gap {last.gap:.2e}, "
                  f"stabilized at k={last.extra.get('stabilized_at')}, {elapsed:.1f} s")


@pytest.mark.parametrize("name", ["sphere2", "poincare-disk"])
def test_c09_ambrose_singer(report, name):
    S = space(name)
    x = S.interior_grid(1)[0] + 0.05
    ck = ha.ck_reports(S, x)[-1]
    tr = ha.translated_curvature_span(S, x, ha.default_curve_family(S, x, seed=9))
    ok = tr.rank == ck.rank == 1 and ck.stabilized and tr.gap > 1e4 and ck.gap > 1e4
    report(9, ok, f"{name}: translated rank {tr.rank} (gap {tr.gap:.1e}), C^k rank {ck.rank} (gap {ck.gap:.1e})")


def test_c10_grading(report):
    S = space("sphere2")
    x = [1.0, 1.0]
    c2 = ha.ck_generators(S, x, 2)
    c2 = c2 + [ha.BaseScaled(lambda p: 1.0 + p[0] * p[1], c2[0])]
    res = ha.grading_residual(S, x, c2, c2, ha.ck_generators(S, x, 4))
    report(10, res < 1e-7, f"projection residual {res:.2e}")


def test_c11_taylor_transport(report):
    S = space("sphere2")
    x = [1.0, 1.0]
    R = ha.CurvatureGenerator(0, 1)
    ok, parts = True, []
    for N in (0, 1, 2):
        res = [ha.taylor_transport_check(S, x, [1.0, 0.5], R, N, t) for t in (0.05, 0.025, 0.0125)]
        ratios = [res[0] / res[1], res[1] / res[2]]
        ok &= all(abs(r - 2 ** (N + 1)) <= 0.5 for r in ratios)
        parts.append(f"N={N}: " + "/".join(f"{r:.2f}" for r in ratios))
    report(11, ok, ", ".join(parts))


def test_c12_lie_bundle_suite(report):
    so3 = lb.so3_ad_model()
    curves = [
        Curve.polyline([[0.0, 0.0], [0.5, 0.2], [0.1, 0.7], [-0.4, 0.1]]),
        Curve.segment([-0.5, -0.4], [0.6, 0.3]),
    ]
    frame = max(lb.parallel_frame_residual(so3, c, times=(0.2, 0.45, 0.8)) for c in curves)
    k = 0.7
    pf = lb.parallel_frame(lb.scalar_model(k), Curve.segment([0.0], [1.0]))
    scalar = float(np.max(np.abs(pf.lam[:, 0, 0] - np.exp(-k * pf.t))))
    bracket = max(lb.transport_bracket_check(so3, c) for c in curves)
    nd = lb.non_derivation_model()
    nd_lie = max(lb.lie_connection_residual(nd, [0.1, 0.2], i) for i in range(2))
    nd_tb = lb.transport_bracket_check(nd, curves[1])
    ok = frame < 1e-9 and scalar < 1e-10 and bracket < 1e-8 and nd_lie > 1e-3 and nd_tb > 1e-3
    report(12, ok, f"frame {frame:.1e}, scalar {scalar:.1e}, so3 bracket {bracket:.1e}, "
                   f"non-derivation lie {nd_lie:.2f} / bracket {nd_tb:.2e}")


def test_c13_determinism(report, tmp_path):
    out = tmp_path / "report.json"
    texts, codes = [], []
    for _ in range(2):
        codes.append(cli.run(["validate", "--seed", "13", "--out", str(out)]))
        data = json.loads(out.read_text())
        data.pop("timing")
        texts.append(json.dumps(data, sort_keys=True))
    ok = texts[0] == texts[1] and codes == [0, 0]
    report(13, ok, f"exit codes {codes}, reports identical: {texts[0] == texts[1]}")
