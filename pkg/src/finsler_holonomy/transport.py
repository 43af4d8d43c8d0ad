"""Horizontal lifts and Berwald parallel transport along curves.

A horizontal lift of a base curve ``c`` solves::

    du^i/dt = -N^i_j(c(t), u) dc^j/dt

and a vertical vector carried along it solves the linearised system::

    dV^i/dt = -B^i_jk(c(t), u) dc^j/dt V^k

The endpoint map ``u0 -> u(1)`` is the nonlinear transport ``rho_c``; the
second system is its differential.  Nothing projects the lift back onto
the indicatrix: the drift of F along the lift is reported instead, as the
integration-quality certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .finsler_core import FinslerSpace, GeometryError, fundamental_tensor
from .integrate import IntegrationError, IntegrationStats, dopri5
from .metric_expr import compile_expr, parse

__all__ = [
    "Curve",
    "TransportResult",
    "TransportError",
    "horizontal_lift",
    "rho",
    "rho_differential",
    "transport",
    "isometry_check",
    "loop_holonomy_displacement",
    "square_loop",
    "f_drift",
    "spherical_triangle_loop",
    "holonomy_angle",
    "random_unit_curves",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-10
_JOINT_GAP = 1e-12


class TransportError(RuntimeError):
    """The lift could not be integrated (step underflow, left the slit bundle)."""


# curves ----------------------------------------------------------------------


class Curve:
    """Piecewise-smooth base curve on the global parameter interval [0, 1].

    Each segment is a generic map ``s -> point`` on [0, 1] written against
    carrier arithmetic (velocities come from differentiating it).  With n
    segments, segment k covers ``[k/n, (k+1)/n]`` of the global parameter.
    """

    def __init__(self, segments: Sequence[Callable], label: str = "curve"):
        if not segments:
            raise ValueError("a curve needs at least one segment")
        self.segments = list(segments)
        self.label = label
        self.dim = len(self._eval(0, 0.0))
        for k in range(len(self.segments) - 1):
            end = self._eval(k, 1.0)
            start = self._eval(k + 1, 0.0)
            gap = float(np.max(np.abs(end - start)))
            if gap > _JOINT_GAP:
                raise ValueError(f"segments {k} and {k + 1} of {label!r} do not join (gap {gap:.3e})")

    def __repr__(self):
        return f"Curve({self.label!r}, segments={len(self.segments)})"

    # evaluation

    def _eval(self, k, s):
        return np.asarray([float(ad.base_value(v)) for v in self.segments[k](s)])

    def _locate(self, t):
        n = len(self.segments)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"curve parameter {t} outside [0, 1]")
        k = min(int(t * n), n - 1)
        return k, t * n - k

    def __call__(self, t: float) -> np.ndarray:
        k, s = self._locate(float(t))
        return self._eval(k, s)

    def segment_point(self, k: int, s: float) -> np.ndarray:
        return self._eval(k, s)

    def segment_velocity(self, k: int, s: float) -> np.ndarray:
        """Velocity of segment k in its own parameter s."""
        d = ad.derivative(lambda p: list(self.segments[k](p[0])), [float(s)], [1.0])
        return np.asarray(d, dtype=float)

    def velocity(self, t: float) -> np.ndarray:
        k, s = self._locate(float(t))
        return len(self.segments) * self.segment_velocity(k, s)

    @property
    def start(self) -> np.ndarray:
        return self(0.0)

    @property
    def end(self) -> np.ndarray:
        return self(1.0)

    def sample(self, n: int = 33) -> np.ndarray:
        return np.array([self(t) for t in np.linspace(0.0, 1.0, n)])

    def inside(self, space: FinslerSpace, n: int = 65) -> bool:
        pts = [self.segment_point(k, s) for k in range(len(self.segments)) for s in np.linspace(0, 1, n)]
        return all(space.contains(p) for p in pts)

    # combinators

    def reversed(self) -> "Curve":
        segs = [(lambda s, f=f: f(1 - s)) for f in reversed(self.segments)]
        return Curve(segs, label=f"reversed({self.label})")

    def then(self, other: "Curve") -> "Curve":
        """Traverse ``self`` and then ``other`` (``other o self`` as a path)."""
        return Curve(self.segments + other.segments, label=f"{self.label}+{other.label}")

    def reparametrized(self, phi: Callable) -> "Curve":
        """Apply an increasing bijection ``phi`` of [0, 1] to every segment."""
        segs = [(lambda s, f=f: f(phi(s))) for f in self.segments]
        return Curve(segs, label=f"reparam({self.label})")

    # constructors

    @classmethod
    def constant(cls, x) -> "Curve":
        x = [float(v) for v in np.ravel(x)]
        return cls([lambda s: [xi + 0.0 * s for xi in x]], label="constant")

    @classmethod
    def segment(cls, a, b, smooth: bool = False) -> "Curve":
        return cls.polyline([a, b], smooth=smooth)

    @classmethod
    def polyline(cls, points, smooth: bool = True) -> "Curve":
        """Straight segments between consecutive vertices.

        With ``smooth`` each segment is traversed with the smoothstep profile
        ``3s^2 - 2s^3`` so the velocity vanishes at the vertices.
        """
        pts = [np.asarray(p, dtype=float).ravel() for p in points]
        if len(pts) < 2:
            raise ValueError("a polyline needs at least two vertices")

        def make(a, b):
            d = b - a
            if smooth:
                return lambda s: [ai + di * (s * s * (3 - 2 * s)) for ai, di in zip(a, d)]
            return lambda s: [ai + di * s for ai, di in zip(a, d)]

        return cls([make(a, b) for a, b in zip(pts[:-1], pts[1:])], label="polyline")

    @classmethod
    def coordinate_arc(cls, x0, axis: int, length: float) -> "Curve":
        x0 = np.asarray(x0, dtype=float).ravel()
        e = np.zeros_like(x0)
        e[axis] = length
        return cls.polyline([x0, x0 + e], smooth=False)

    @classmethod
    def from_expressions(cls, texts: Sequence[str]) -> "Curve":
        """Analytic curve from one expression in ``t`` per coordinate."""
        fns = [compile_expr(parse(txt, names=["t"]), ["t"]) for txt in texts]
        return cls([lambda s: [f([s]) + 0.0 * s for f in fns]], label="expression")

    @classmethod
    def from_function(cls, fn: Callable, label: str = "function") -> "Curve":
        return cls([fn], label=label)


def square_loop(x, i: int, j: int, eps: float) -> Curve:
    """Coordinate square: +e_i, +e_j, -e_i, -e_j with side eps."""
    x = np.asarray(x, dtype=float).ravel()
    ei = np.zeros_like(x)
    ej = np.zeros_like(x)
    ei[i] = eps
    ej[j] = eps
    return Curve.polyline([x, x + ei, x + ei + ej, x + ej, x], smooth=False)


def spherical_triangle_loop(theta_a: float, phi0: float, span: float):
    """Geodesic triangle on the unit sphere in (theta, phi) coordinates.

    Vertices: A = (theta_a, phi0), B = (pi/2, phi0), C = (pi/2, phi0 + span).
    Sides A->B (meridian), B->C (equator), C->A (great-circle arc).  The
    angle at B is a right angle, so the enclosed area E satisfies
    ``tan(E/2) = tan(p/2) tan(q/2)`` with legs p = pi/2 - theta_a, q = span.
    Returns ``(curve, area)``.
    """
    half = math.pi / 2

    def cart(theta, phi):
        return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])

    pa = cart(theta_a, phi0)
    pc = cart(half, phi0 + span)
    omega = math.acos(float(np.clip(pa @ pc, -1.0, 1.0)))

    def meridian(s):
        return [theta_a + (half - theta_a) * s, phi0 + 0.0 * s]

    def equator(s):
        return [half + 0.0 * s, phi0 + span * s]

    def great_circle(s):
        w0 = ad.sin((1 - s) * omega) / math.sin(omega)
        w1 = ad.sin(s * omega) / math.sin(omega)
        p = [w0 * pc[k] + w1 * pa[k] for k in range(3)]
        return [ad.arccos(p[2]), ad.arctan2(p[1], p[0])]

    curve = Curve([meridian, equator, great_circle], label="spherical-triangle")
    area = 2 * math.atan(math.tan((half - theta_a) / 2) * math.tan(span / 2))
    return curve, area


# transport -------------------------------------------------------------------


@dataclass
class TransportResult:
    """Endpoint of a horizontal lift, optional carried vectors, diagnostics."""

    point: np.ndarray
    vectors: list[np.ndarray] = field(default_factory=list)
    f_drift: float = 0.0
    stats: IntegrationStats = field(default_factory=IntegrationStats)
    nodes: list | None = None

    def to_dict(self) -> dict:
        return {
            "point": np.asarray(self.point).tolist(),
            "vectors": [np.asarray(v).tolist() for v in self.vectors],
            "f_drift": self.f_drift,
            "integrator": self.stats.to_dict(),
        }


def _as_state(u0, m):
    u0 = np.asarray(u0, dtype=float)
    if u0.shape[0] != m:
        raise ValueError(f"fibre point must have {m} leading components, got shape {u0.shape}")
    return u0


def _rhs(space: FinslerSpace, curve: Curve, k: int, n_vec: int, m: int):
    seg = curve.segments[k]

    def fun(s, y):
        x_and_v = ad.jvp(lambda p: list(seg(p[0])), [s], [1.0])
        x = [float(ad.base_value(v)) for v in x_and_v[0]]
        xdot = [float(ad.base_value(v)) for v in x_and_v[1]]
        u = [y[a] for a in range(m)]
        if n_vec == 0:
            du = space.connection_dot(x, u, xdot)
            return np.stack([-np.asarray(v, dtype=float) * np.ones_like(y[0]) for v in du])
        out = []
        tail = []
        for q in range(n_vec):
            V = [y[m * (q + 1) + a] for a in range(m)]
            nu, bv = ad.jvp(lambda uu: space.connection_dot(x, uu, xdot), u, V)
            if q == 0:
                out = [-np.asarray(v, dtype=float) * np.ones_like(y[0]) for v in nu]
            tail.extend(-np.asarray(v, dtype=float) * np.ones_like(y[0]) for v in bv)
        return np.stack(out + tail)

    return fun


def _drift(space, curve, k, nodes, m, f0):
    worst = 0.0
    for s, y in nodes:
        x = [float(v) for v in curve.segment_point(k, s)]
        f = np.asarray(space.F(x, [y[a] for a in range(m)]), dtype=float)
        worst = max(worst, float(np.max(np.abs(f - f0))))
    return worst


def transport(
    space: FinslerSpace,
    curve: Curve,
    u0,
    vectors: Sequence = (),
    *,
    t: float = 1.0,
    tol: float = DEFAULT_TOL,
    sample_interval: float | None = None,
    keep_nodes: bool = False,
) -> TransportResult:
    """Lift ``curve`` through ``u0`` up to global parameter ``t``.

    ``u0`` has shape (m,) or (m, S) for a batch of S fibre points; each
    entry of ``vectors`` has the same shape and is carried by the
    differential of the lift.  ``sample_interval`` adds stopping points
    (in the global parameter) where the F-drift is sampled in addition to
    every accepted step.
    """
    m = space.dim
    if curve.dim != m:
        raise ValueError(f"curve lives in dimension {curve.dim}, space in {m}")
    u0 = _as_state(u0, m)
    vecs = [_as_state(v, m) for v in vectors]
    if any(v.shape != u0.shape for v in vecs):
        raise ValueError("carried vectors must match the fibre point's shape")
    if not np.all(np.any(u0 != 0, axis=0)):
        raise GeometryError("u0 must be nonzero (slit tangent bundle)")
    y = np.concatenate([u0] + vecs, axis=0)
    n = len(curve.segments)
    x0 = [float(v) for v in curve.start]
    f0 = np.asarray(space.F(x0, [u0[a] for a in range(m)]), dtype=float)
    stats = IntegrationStats()
    drift = 0.0
    all_nodes = [] if keep_nodes else None
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    k_end, s_end = curve._locate(t)
    for k in range(n):
        if k > k_end:
            break
        s_stop = s_end if k == k_end else 1.0
        if s_stop == 0.0:
            continue
        fun = _rhs(space, curve, k, len(vecs), m)
        stops = [s_stop]
        if sample_interval:
            local = sample_interval * n
            stops = list(np.arange(local, s_stop, local)) + [s_stop]
        s0 = 0.0
        for stop in stops:
            try:
                y, st, nodes = dopri5(fun, s0, stop, y, rtol=tol, atol=tol, trace=True)
            except (IntegrationError, ad.DomainError, ZeroDivisionError, FloatingPointError) as exc:
                raise TransportError(f"lift of {curve.label!r} failed on segment {k}: {exc}") from exc
            stats = stats.merge(st)
            drift = max(drift, _drift(space, curve, k, nodes, m, f0))
            if all_nodes is not None:
                all_nodes.extend(((k + s) / n, yy[:m].copy()) for s, yy in nodes)
            s0 = stop
    if not np.all(np.isfinite(y)):
        raise TransportError("non-finite state after transport")
    return TransportResult(
        point=y[:m],
        vectors=[y[m * (q + 1): m * (q + 2)] for q in range(len(vecs))],
        f_drift=drift,
        stats=stats,
        nodes=all_nodes,
    )


def horizontal_lift(space, curve, u0, t: float = 1.0, *, tol: float = DEFAULT_TOL) -> TransportResult:
    """The lift through ``u0`` evaluated at global parameter ``t``."""
    return transport(space, curve, u0, t=t, tol=tol)


def rho(space, curve, u0, *, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Nonlinear transport ``rho_c(u0)``."""
    return transport(space, curve, u0, tol=tol).point


def rho_differential(space, curve, u0, V0, t: float = 1.0, *, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Berwald parallel transport of the vertical vector ``V0`` at ``u0``."""
    return transport(space, curve, u0, [V0], t=t, tol=tol).vectors[0]


def f_drift(space, curve, u0, *, tol: float = DEFAULT_TOL, sample_interval: float | None = None) -> float:
    """Max of ``|F(c(t), u(t)) - F(c(0), u0)|`` over the sampled lift."""
    return transport(space, curve, u0, tol=tol, sample_interval=sample_interval).f_drift


def isometry_check(space, curve, u0, pairs, *, tol: float = DEFAULT_TOL) -> float:
    """Max of ``|g_y(rho_* V, rho_* W) - g_x(V, W)|`` over vector pairs."""
    u0 = np.asarray(u0, dtype=float)
    # transport each distinct vector once
    index, flat = {}, []
    for vec in (v for pair in pairs for v in pair):
        key = tuple(np.asarray(vec, dtype=float).tolist())
        if key not in index:
            index[key] = len(flat)
            flat.append(np.asarray(key))
    res = transport(space, curve, u0, flat, tol=tol)
    g0 = fundamental_tensor(space, curve.start, u0)
    g1 = fundamental_tensor(space, curve.end, res.point)
    worst = 0.0
    for V, W in pairs:
        a = index[tuple(np.asarray(V, dtype=float).tolist())]
        b = index[tuple(np.asarray(W, dtype=float).tolist())]
        V1, W1 = res.vectors[a], res.vectors[b]
        worst = max(worst, abs(float(V1 @ g1 @ W1) - float(flat[a] @ g0 @ flat[b])))
    return worst


def loop_holonomy_displacement(space, x, i: int, j: int, eps: float, u0, *, tol: float = 1e-12) -> np.ndarray:
    """``(rho_loop(u0) - u0) / eps^2`` around the square loop at x.

    The loop runs +e_i, +e_j, -e_i, -e_j.  As eps -> 0 this tends to
    ``[H_i, H_j]`` at u0, i.e. to minus the curvature field R(e_i, e_j).
    """
    loop = square_loop(x, i, j, eps)
    if not loop.inside(space):
        raise GeometryError(f"square loop of side {eps} at {x} leaves the chart")
    u0 = np.asarray(u0, dtype=float)
    return (rho(space, loop, u0, tol=tol) - u0) / eps**2


def holonomy_angle(space, x, u0, u1) -> float:
    """Signed angle from ``u0`` to ``u1`` in the fibre metric ``g_x(u0)`` (m = 2).

    Orientation is that of the coordinates: positive from d/du^1 towards
    d/du^2.  For a Riemannian surface this is the holonomy rotation of a
    loop based at x.
    """
    if space.dim != 2:
        raise ValueError("holonomy_angle is defined for 2-dimensional bases")
    g = fundamental_tensor(space, x, u0)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    e1 = u0 / math.sqrt(u0 @ g @ u0)
    w = np.array([-e1[1], e1[0]])
    e2 = w - (w @ g @ e1) * e1
    e2 /= math.sqrt(e2 @ g @ e2)
    return math.atan2(float(u1 @ g @ e2), float(u1 @ g @ e1))


def random_unit_curves(space: FinslerSpace, rng: np.random.Generator, n: int, margin: float = 0.05) -> list[Curve]:
    """``n`` straight segments of coordinate length 1 inside the chart (length shrinks if the box is narrower)."""
    width = space.upper - space.lower
    curves = []
    for _ in range(n):
        d = rng.normal(size=space.dim)
        d /= np.linalg.norm(d)
        room = (1 - 2 * margin) * width
        d *= min(1.0, float(np.min(room / np.maximum(np.abs(d), 1e-300))))
        lo = space.lower + margin * width - np.minimum(d, 0)
        hi = space.upper - margin * width - np.maximum(d, 0)
        a = lo + rng.random(space.dim) * (hi - lo)
        curves.append(Curve.segment(a, a + d))
    return curves
