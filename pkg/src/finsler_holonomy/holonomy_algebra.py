"""Curvature fields, the operator nabla on vertical fields, and span estimates.

Vertical vector fields are construction trees evaluated on demand: every
node knows how to produce its components at ``(x, u)`` over any carrier,
so nabla and brackets simply differentiate their children.  Sampling only
happens when a span is estimated.

Sign convention: ``R(d_i, d_j) = -[H_i, H_j]``, so componentwise
``R^k_ij = H_i(N^k_j) - H_j(N^k_i)``.  The square-loop displacement of the
nonlinear transport converges to ``-R`` (see
:func:`~finsler_holonomy.transport.loop_holonomy_displacement`).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .finsler_core import FinslerSpace, GeometryError, indicatrix_point
from .transport import Curve, TransportError, transport

__all__ = [
    "VerticalField",
    "ZeroField",
    "CoordinateField",
    "FunctionField",
    "CurvatureGenerator",
    "Covariant",
    "Bracket",
    "Combination",
    "BaseScaled",
    "SpanReport",
    "curvature_field",
    "curvature_by_bracket",
    "nabla",
    "nabla_along",
    "bracket_vertical",
    "curvature_identity_residual",
    "ck_generators",
    "ck_reports",
    "indicatrix_samples",
    "span_dimension",
    "numerical_rank",
    "curvature_algebra_dimension",
    "translated_curvature_span",
    "default_curve_family",
    "taylor_transport_check",
    "grading_residual",
    "f_annihilation",
    "DEFAULT_RANK_TOL",
]

DEFAULT_RANK_TOL = 1e-8
# singular values below this are treated as exact zeros
ABS_RANK_FLOOR = 1e-12


def _basis(n, k):
    e = [0.0] * n
    e[k] = 1.0
    return e


class VerticalField:
    """A vertical vector field on the slit tangent bundle.

    ``depth`` counts derivative orders of the nonlinear connection the
    evaluation needs (a curvature generator has depth 2, each nabla or
    bracket adds one); it is checked against the autodiff cap when the
    tree is built.
    """

    depth = 0
    label = "field"

    def evaluate(self, space: FinslerSpace, x, u) -> list:
        raise NotImplementedError

    def at(self, space: FinslerSpace, x, u) -> np.ndarray:
        """Float components at ``x`` for fibre points ``u`` of shape (m,) or (m, S)."""
        u = np.asarray(u, dtype=float)
        x = [float(v) for v in np.ravel(x)]
        out = self.evaluate(space, x, [u[a] for a in range(space.dim)])
        shape = u.shape[1:]
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in out])

    def _check_depth(self):
        cap = ad.get_depth_cap()
        if self.depth > cap:
            raise ad.DepthCapError(f"field {self.label} needs depth {self.depth}, cap is {cap}")

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"

    def __add__(self, other):
        return Combination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return Combination([(1.0, self), (-1.0, other)])

    def __rmul__(self, c):
        return Combination([(float(c), self)])

    def __neg__(self):
        return Combination([(-1.0, self)])


class ZeroField(VerticalField):
    label = "0"

    def evaluate(self, space, x, u):
        return [0.0] * space.dim


class CoordinateField(VerticalField):
    """The fibre-constant field ``d/du^a``."""

    def __init__(self, a: int):
        self.a = a
        self.label = f"d/du{a + 1}"

    def evaluate(self, space, x, u):
        return [1.0 if k == self.a else 0.0 for k in range(space.dim)]


class FunctionField(VerticalField):
    """Field from a generic callable ``fn(x, u) -> components``."""

    def __init__(self, fn: Callable, label: str = "function", depth: int = 0):
        self.fn = fn
        self.label = label
        self.depth = depth

    def evaluate(self, space, x, u):
        return list(self.fn(x, u))


class CurvatureGenerator(VerticalField):
    """``R(d_i, d_j)`` with components ``H_i(N^k_j) - H_j(N^k_i)``."""

    depth = 2

    def __init__(self, i: int, j: int):
        self.i, self.j = i, j
        self.label = f"R({i + 1},{j + 1})"
        self._check_depth()

    def evaluate(self, space, x, u):
        m = space.dim
        if self.i == self.j:
            return [0.0] * m
        i, j = self.i, self.j
        z = list(x) + list(u)
        ni = space.connection_column(x, u, i)
        nj = space.connection_column(x, u, j)
        hi_nj = ad.derivative(
            lambda p: space.connection_column(p[:m], p[m:], j), z, _basis(m, i) + [-v for v in ni]
        )
        hj_ni = ad.derivative(
            lambda p: space.connection_column(p[:m], p[m:], i), z, _basis(m, j) + [-v for v in nj]
        )
        return [a - b for a, b in zip(hi_nj, hj_ni)]


class Covariant(VerticalField):
    """``nabla_X V = [X^H, V]`` for a constant base vector X."""

    def __init__(self, X: Sequence[float], V: VerticalField, label: str | None = None):
        self.X = [float(v) for v in X]
        self.V = V
        self.depth = max(V.depth, 1) + 1
        self.label = label or f"nabla_{_vec_label(self.X)} {V.label}"
        self._check_depth()

    def evaluate(self, space, x, u):
        m = space.dim
        X = self.X
        nx = space.connection_dot(x, u, X)
        direction = X + [-v for v in nx]
        val, hv = ad.jvp(lambda p: self.V.evaluate(space, p[:m], p[m:]), list(x) + list(u), direction)
        vn = ad.derivative(lambda uu: space.connection_dot(x, uu, X), list(u), list(val))
        return [a + b for a, b in zip(hv, vn)]


def _vec_label(X):
    nz = [k for k, v in enumerate(X) if v != 0]
    if len(nz) == 1 and X[nz[0]] == 1.0:
        return str(nz[0] + 1)
    return "(" + ",".join(f"{v:g}" for v in X) + ")"


class Bracket(VerticalField):
    """Fibrewise bracket ``[V, W]^a = V(W^a) - W(V^a)``."""

    def __init__(self, V: VerticalField, W: VerticalField):
        self.V, self.W = V, W
        self.depth = max(V.depth, W.depth) + 1
        self.label = f"[{V.label}, {W.label}]"
        self._check_depth()

    def evaluate(self, space, x, u):
        u = list(u)
        v_val, dv_w = None, None
        w_val = self.W.evaluate(space, x, u)
        v_val = self.V.evaluate(space, x, u)
        dw = ad.derivative(lambda uu: self.W.evaluate(space, x, uu), u, list(v_val))
        dv_w = ad.derivative(lambda uu: self.V.evaluate(space, x, uu), u, list(w_val))
        return [a - b for a, b in zip(dw, dv_w)]


class Combination(VerticalField):
    """Real linear combination of fields."""

    def __init__(self, terms: Sequence[tuple[float, VerticalField]]):
        self.terms = [(float(c), f) for c, f in terms]
        self.depth = max((f.depth for _, f in self.terms), default=0)
        self.label = " + ".join(f"{c:g}*{f.label}" for c, f in self.terms)

    def evaluate(self, space, x, u):
        total = [0.0] * space.dim
        for c, f in self.terms:
            total = [t + c * v for t, v in zip(total, f.evaluate(space, x, u))]
        return total


class BaseScaled(VerticalField):
    """``f(x) V`` for a generic base function ``f``."""

    def __init__(self, f: Callable, V: VerticalField, label: str = "f"):
        self.f = f
        self.V = V
        self.depth = V.depth
        self.label = f"{label}*{V.label}"

    def evaluate(self, space, x, u):
        s = self.f(x)
        return [s * v for v in self.V.evaluate(space, x, u)]


# operations ------------------------------------------------------------------


def curvature_field(space: FinslerSpace, x, i: int, j: int) -> VerticalField:
    """Curvature field ``R_x(e_i, e_j)``.

    The returned tree is defined on the whole slit bundle; evaluate it on
    the fibre over ``x``.  ``x`` is only checked against the chart.
    """
    if not space.contains(x):
        raise GeometryError(f"{x} is outside the chart")
    if i == j:
        return ZeroField()
    return CurvatureGenerator(i, j)


def curvature_by_bracket(space: FinslerSpace, x, u, i: int, j: int) -> np.ndarray:
    """``-[H_i, H_j]`` at (x, u) via the bracket of full vector fields on TM.

    Independent of :class:`CurvatureGenerator`: the horizontal fields are
    treated as vector fields on R^2m and bracketed coordinatewise.
    """
    m = space.dim
    x = [float(v) for v in np.ravel(x)]
    u = np.asarray(u, dtype=float)
    ul = [u[a] for a in range(m)]

    def H(k):
        def comps(z):
            return _basis(m, k) + [-v for v in space.connection_column(z[:m], z[m:], k)]

        return comps

    z = x + ul
    Hi, Hj = H(i), H(j)
    a = ad.derivative(Hj, z, Hi(z))
    b = ad.derivative(Hi, z, Hj(z))
    br = [p - q for p, q in zip(a, b)]
    horiz = np.array([np.max(np.abs(np.asarray(v, dtype=float))) for v in br[:m]])
    if np.any(horiz > 1e-9):
        raise GeometryError("bracket of horizontal coordinate fields has a horizontal part")
    return -np.stack([np.broadcast_to(np.asarray(v, dtype=float), u.shape[1:]) for v in br[m:]])


def nabla(space: FinslerSpace, i: int, V: VerticalField) -> VerticalField:
    """``nabla_{d/dx^i} V``."""
    return Covariant(_basis(space.dim, i), V)


def nabla_along(X: Sequence[float], V: VerticalField) -> VerticalField:
    return Covariant(X, V)


def bracket_vertical(V: VerticalField, W: VerticalField) -> VerticalField:
    return Bracket(V, W)


def curvature_identity_residual(space: FinslerSpace, x, u, i: int, j: int, V: VerticalField) -> float:
    """``|nabla_i nabla_j V - nabla_j nabla_i V - [V, R(d_i, d_j)]|`` at (x, u)."""
    m = space.dim
    lhs = Covariant(_basis(m, i), Covariant(_basis(m, j), V)) - Covariant(_basis(m, j), Covariant(_basis(m, i), V))
    rhs = Bracket(V, CurvatureGenerator(i, j))
    a = lhs.at(space, x, u)
    b = rhs.at(space, x, u)
    return float(np.max(np.abs(a - b)))


def ck_generators(space: FinslerSpace, x, k: int) -> list[VerticalField]:
    """Spanning fields of C^k: all ``nabla_{i1} ... nabla_{ir} R(d_j, d_l)``, r <= k-2, j < l."""
    if k < 2:
        raise ValueError("C^k is only generated for k >= 2")
    if k > ad.get_depth_cap():
        raise ad.DepthCapError(f"C^{k} needs depth {k}, cap is {ad.get_depth_cap()}")
    if not space.contains(x):
        raise GeometryError(f"{x} is outside the chart")
    m = space.dim
    level = [CurvatureGenerator(j, l) for j, l in itertools.combinations(range(m), 2)]
    out = list(level)
    for _ in range(k - 2):
        level = [Covariant(_basis(m, i), V) for i in range(m) for V in level]
        out.extend(level)
    return out


# sampling and rank -------------------------------------------------------------


def _fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = k * math.pi * (3 - math.sqrt(5))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z])


def indicatrix_samples(space: FinslerSpace, x, n: int | None = None) -> np.ndarray:
    """Deterministic indicatrix points over x, shape (m, S).

    m = 2: n (default 16) equally spaced angles offset by half a step, so
    no sample sits on a coordinate axis.  m = 3: a Fibonacci lattice of n
    (default 64) directions.  Directions are rescaled onto F = 1.
    """
    m = space.dim
    if m == 2:
        n = n or 16
        ang = (2 * np.arange(n) + 1) * math.pi / n
        dirs = np.stack([np.cos(ang), np.sin(ang)])
    elif m == 3:
        dirs = _fibonacci_sphere(n or 64)
    else:
        n = n or 16 * m
        rng = np.random.default_rng(12345)
        dirs = rng.normal(size=(m, n))
    x = [float(v) for v in np.ravel(x)]
    f = np.asarray(space.F(x, [dirs[a] for a in range(m)]), dtype=float)
    if np.any(f <= 0):
        raise GeometryError("F is not positive on all sample directions")
    return dirs / f


@dataclass
class SpanReport:
    """Numerical rank of sampled fields.

    ``matrix`` has one row per field and one column per (sample, component).
    ``gap`` is ``sigma[rank-1] / sigma[rank]`` (infinite when the rank is
    full or the tail is exactly zero).
    """

    labels: list[str]
    samples: np.ndarray
    matrix: np.ndarray
    singular_values: np.ndarray
    rank: int
    gap: float
    tol: float
    stabilized: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        out = {
            "generators": list(self.labels),
            "singular_values": [num(s) for s in self.singular_values],
            "rank": int(self.rank),
            "gap": num(self.gap),
            "tol": self.tol,
            "stabilized": self.stabilized,
            "n_samples": int(self.samples.shape[-1]) if self.samples.size else 0,
        }
        out.update(self.extra)
        return out


def numerical_rank(matrix: np.ndarray, tol: float = DEFAULT_RANK_TOL):
    """``(rank, singular values, gap)`` with relative tolerance ``tol``."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return 0, np.zeros(0), math.inf
    sv = np.linalg.svd(matrix, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    if smax <= ABS_RANK_FLOOR:
        rank = 0
    else:
        rank = int(np.sum(sv > tol * smax))
    if rank == 0:
        gap = math.inf if smax <= ABS_RANK_FLOOR else ABS_RANK_FLOOR / smax
    elif rank >= sv.size or sv[rank] == 0:
        gap = math.inf
    else:
        gap = float(sv[rank - 1] / sv[rank])
    return rank, sv, gap


def _rows(fields, space, x, samples):
    return np.array([f.at(space, x, samples).ravel(order="F") for f in fields])


def span_dimension(
    fields: Sequence[VerticalField],
    space: FinslerSpace,
    x,
    samples: np.ndarray | None = None,
    tol: float = DEFAULT_RANK_TOL,
) -> SpanReport:
    """Numerical dimension of the span of ``fields`` restricted to the fibre over x."""
    if not fields:
        raise ValueError("span_dimension needs at least one field")
    if samples is None:
        samples = indicatrix_samples(space, x)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] == 0:
        raise ValueError("empty sample set")
    mat = _rows(fields, space, x, samples)
    rank, sv, gap = numerical_rank(mat, tol)
    return SpanReport([f.label for f in fields], samples, mat, sv, rank, gap, tol)


def ck_reports(
    space: FinslerSpace,
    x,
    k_max: int = 6,
    samples: np.ndarray | None = None,
    tol: float = DEFAULT_RANK_TOL,
) -> list[SpanReport]:
    """Span reports for C^2, C^3, ... until the rank has been constant for
    three consecutive k (i.e. unchanged twice in a row) or ``k_max``.

    The last report carries ``stabilized`` and ``extra['stabilized_at']``.
    """
    if samples is None:
        samples = indicatrix_samples(space, x)
    m = space.dim
    level = [CurvatureGenerator(j, l) for j, l in itertools.combinations(range(m), 2)]
    fields = list(level)
    rows = _rows(level, space, x, samples)
    reports = []
    for k in range(2, k_max + 1):
        if k > 2:
            level = [Covariant(_basis(m, i), V) for i in range(m) for V in level]
            fields.extend(level)
            rows = np.vstack([rows, _rows(level, space, x, samples)])
        rank, sv, gap = numerical_rank(rows, tol)
        rep = SpanReport([f.label for f in fields], samples, rows.copy(), sv, rank, gap, tol)
        rep.extra["k"] = k
        reports.append(rep)
        if len(reports) >= 3 and len({r.rank for r in reports[-3:]}) == 1:
            rep.stabilized = True
            rep.extra["stabilized_at"] = k
            return reports
    reports[-1].stabilized = False
    return reports


def curvature_algebra_dimension(
    space: FinslerSpace,
    x,
    bracket_depth_cap: int = 3,
    samples: np.ndarray | None = None,
    tol: float = DEFAULT_RANK_TOL,
) -> SpanReport:
    """Dimension of the Lie algebra generated by the curvature fields at x.

    Level 0 is the set of generators ``R_x(e_i, e_j)``; level n adds the
    brackets of the generators with an independent subset of level n-1.
    Stops when a level adds no rank (``stabilized``) or at the cap.
    """
    if bracket_depth_cap < 1:
        raise ValueError("bracket_depth_cap must be at least 1")
    if samples is None:
        samples = indicatrix_samples(space, x)
    m = space.dim
    gens = [CurvatureGenerator(j, l) for j, l in itertools.combinations(range(m), 2)]
    fields = list(gens)
    rows = _rows(gens, space, x, samples)
    rank, sv, gap = numerical_rank(rows, tol)
    frontier = _independent(gens, rows, tol)
    stabilized = False
    depth_reached = 0
    for depth in range(1, bracket_depth_cap + 1):
        new = []
        for g in gens:
            for f in frontier:
                try:
                    new.append(Bracket(g, f))
                except ad.DepthCapError:
                    continue
        if not new:
            break
        new_rows = _rows(new, space, x, samples)
        all_rows = np.vstack([rows, new_rows])
        new_rank, sv, gap = numerical_rank(all_rows, tol)
        depth_reached = depth
        if new_rank == rank:
            stabilized = True
            break
        fields.extend(new)
        rows = all_rows
        rank = new_rank
        frontier = _independent(new, new_rows, tol)
    rank, sv, gap = numerical_rank(rows, tol)
    rep = SpanReport([f.label for f in fields], samples, rows, sv, rank, gap, tol, stabilized)
    rep.extra["bracket_depth"] = depth_reached
    return rep


def _independent(fields, rows, tol):
    """Greedy maximal independent subset of ``fields`` (by their sample rows)."""
    chosen, basis = [], np.zeros((0, rows.shape[1]))
    scale = max(float(np.max(np.abs(rows))) if rows.size else 0.0, ABS_RANK_FLOOR)
    for f, r in zip(fields, rows):
        trial = np.vstack([basis, r])
        rank, _, _ = numerical_rank(trial / scale, tol)
        if rank > basis.shape[0]:
            chosen.append(f)
            basis = trial
    return chosen


# translated span (Ambrose-Singer side) ----------------------------------------


def default_curve_family(space: FinslerSpace, x, seed: int = 0, n_segments: int = 8, n_polylines: int = 4) -> list[Curve]:
    """Straight segments from ``n_segments`` seeded random points to x plus
    ``n_polylines`` two-segment polylines through a random corner."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    starts = space.random_points(rng, n_segments + n_polylines)
    corners = space.random_points(rng, n_polylines)
    curves = [Curve.segment(y, x, smooth=True) for y in starts[:n_segments]]
    curves += [Curve.polyline([y, c, x], smooth=True) for y, c in zip(starts[n_segments:], corners)]
    return curves


def translated_curvature_span(
    space: FinslerSpace,
    x,
    curves: Sequence[Curve] | None = None,
    samples: np.ndarray | None = None,
    tol: float = DEFAULT_RANK_TOL,
    ode_tol: float = 1e-10,
) -> SpanReport:
    """Span of the curvature fields at x together with their parallel translates.

    For a curve c from y to x the translate ``rho_c* R_y(e_i, e_j)`` is
    sampled at each fibre point v over x by lifting v backwards to
    u = rho_c^{-1}(v), evaluating R_y at u, and carrying that vector forward
    with the differential of the lift.
    """
    x = np.asarray(x, dtype=float)
    if curves is None:
        curves = default_curve_family(space, x)
    if samples is None:
        samples = indicatrix_samples(space, x)
    m = space.dim
    gens = [CurvatureGenerator(j, l) for j, l in itertools.combinations(range(m), 2)]
    rows = list(_rows(gens, space, x, samples))
    labels = [g.label + "@x" for g in gens]
    failures = 0
    mismatch = 0.0
    for n, c in enumerate(curves):
        if np.max(np.abs(c.end - x)) > 1e-12:
            raise ValueError(f"curve {n} ends at {c.end}, not at {x}")
        try:
            back = transport(space, c.reversed(), samples, tol=ode_tol).point
            vals = [g.at(space, c.start, back) for g in gens]
            fwd = transport(space, c, back, vals, tol=ode_tol)
        except (TransportError, GeometryError, ArithmeticError) as exc:
            failures += 1
            warnings.warn(f"transport along curve {n} failed: {exc}", RuntimeWarning, stacklevel=2)
            continue
        mismatch = max(mismatch, float(np.max(np.abs(fwd.point - samples))))
        for g, v in zip(gens, fwd.vectors):
            rows.append(v.ravel(order="F"))
            labels.append(f"tau_c{n} {g.label}")
    mat = np.array(rows)
    rank, sv, gap = numerical_rank(mat, tol)
    rep = SpanReport(labels, samples, mat, sv, rank, gap, tol)
    rep.extra.update({"curves": len(curves), "failed_curves": failures, "roundtrip_mismatch": mismatch})
    return rep


# Taylor transport --------------------------------------------------------------


def taylor_transport_check(
    space: FinslerSpace,
    x,
    direction,
    V: VerticalField,
    order: int,
    t: float,
    samples: np.ndarray | None = None,
    ode_tol: float = 1e-12,
) -> float:
    """Truncation residual of the parallel-translated Taylor series of V.

    Along the straight line ``c(s) = x + s * direction`` compares
    ``V`` at ``c(t)`` with the transport over [0, t] of
    ``sum_{r <= order} t^r / r! (nabla_cdot^r V)_x``, sampled on the
    indicatrix over x (each sample u is compared at ``rho(u)``).
    The residual decays like ``t^(order + 1)``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    if samples is None:
        samples = indicatrix_samples(space, x)
    terms = [V]
    for _ in range(order):
        terms.append(Covariant(list(d), terms[-1]))
    series = sum((t**r / math.factorial(r)) * terms[r].at(space, x, samples) for r in range(order + 1))
    y = x + t * d
    c = Curve.segment(x, y, smooth=False)
    res = transport(space, c, samples, [series], tol=ode_tol)
    target = V.at(space, y, res.point)
    return float(np.max(np.abs(target - res.vectors[0])))


# filtration checks ---------------------------------------------------------------


def grading_residual(
    space: FinslerSpace,
    x,
    left: Sequence[VerticalField],
    right: Sequence[VerticalField],
    target: Sequence[VerticalField],
    samples: np.ndarray | None = None,
) -> float:
    """Largest distance of a sampled bracket ``[U, W]`` from span(target).

    Distances are least-squares projection residuals of the sampled rows,
    relative to ``max(1, |[U, W]|)``.
    """
    if samples is None:
        samples = indicatrix_samples(space, x)
    basis = _rows(target, space, x, samples)
    q, r = np.linalg.qr(basis.T)
    keep = np.abs(np.diag(r)) > ABS_RANK_FLOOR * max(1.0, float(np.max(np.abs(r))) if r.size else 1.0)
    q = q[:, keep]
    worst = 0.0
    for U in left:
        for W in right:
            b = Bracket(U, W).at(space, x, samples).ravel(order="F")
            resid = b - q @ (q.T @ b)
            worst = max(worst, float(np.linalg.norm(resid)) / max(1.0, float(np.linalg.norm(b))))
    return worst


def f_annihilation(space: FinslerSpace, V: VerticalField, x, samples: np.ndarray | None = None) -> float:
    """Max ``|V(F)|`` over fibre samples: zero iff V is tangent to the indicatrix."""
    if samples is None:
        samples = indicatrix_samples(space, x)
    x = [float(v) for v in np.ravel(x)]
    u = [samples[a] for a in range(space.dim)]
    vals = V.evaluate(space, x, u)
    df = ad.derivative(lambda uu: space.F(x, uu), u, vals)
    return float(np.max(np.abs(np.asarray(df, dtype=float))))
