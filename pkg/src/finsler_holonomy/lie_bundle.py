"""Finite-dimensional Lie algebra bundles with a linear connection.

A model is given in a local frame ``e_1 .. e_n`` over a box in R^m by

* structure constants ``C[c, a, b] = C^c_ab(x)`` with ``[e_a, e_b] = C^c_ab e_c``
* connection coefficients ``K[i, b, a] = (K_i)^b_a(x)`` with
  ``nabla_{d_i} e_a = (K_i)^b_a e_b``.

Along a curve a parallel frame ``eta_a = Lambda^b_a e_b`` solves
``dLambda/dt = -(cdot^i K_i) Lambda``, and parallel transport acts on
component vectors by ``Lambda(t)``.  The connection is a Lie connection
(a derivation of the bracket) exactly when transport preserves brackets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .finsler_core import FinslerSpace
from .integrate import IntegrationStats, dopri5
from .metric_expr import compile_expr, parse
from .transport import Curve

__all__ = [
    "LieAlgebraBundleModel",
    "ParallelFrame",
    "FrameDegenerateError",
    "HolonomyFrame",
    "parallel_frame",
    "parallel_frame_residual",
    "lie_connection_residual",
    "jacobi_residual",
    "transport_bracket_check",
    "structure_constant_drift",
    "frame_from_holonomy",
    "ray_frame",
    "levi_civita",
    "ad_matrix",
    "scalar_model",
    "so3_ad_model",
    "non_derivation_model",
    "so3_plus_line_model",
    "model_from_config",
]

DET_FLOOR = 1e-10


class FrameDegenerateError(RuntimeError):
    """The transported frame became singular; ``t_valid`` is the last good parameter."""

    def __init__(self, message: str, t_valid: float):
        super().__init__(message)
        self.t_valid = t_valid


def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for a, b, c in itertools.permutations(range(3)):
        eps[a, b, c] = np.linalg.det(np.eye(3)[[a, b, c]])
    return eps


def ad_matrix(C: np.ndarray, A) -> np.ndarray:
    """Matrix of ``ad(A)`` in the frame: ``ad(A)[c, a] = A^d C^c_da``."""
    return np.einsum("d,cda->ca", np.asarray(A, dtype=object), np.asarray(C, dtype=object))


def _as_array(v):
    a = np.asarray(v, dtype=object)
    try:
        return a.astype(float)
    except TypeError:
        return a


class LieAlgebraBundleModel:
    """Lie algebra bundle of rank n over a box, with a linear connection.

    Parameters
    ----------
    lower, upper : sequence of float
        Corners of the base box.
    n : int
        Fibre dimension.
    C : callable
        ``C(x) -> (n, n, n)`` array-like, generic over autodiff carriers.
    K : callable
        ``K(x) -> (m, n, n)`` array-like, generic over autodiff carriers.
    """

    def __init__(self, lower, upper, n: int, C: Callable, K: Callable, name: str = "model"):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.dim = self.lower.size
        self.n = int(n)
        self._C = C
        self._K = K
        self.name = name
        c0 = self.C(self.center)
        k0 = self.K(self.center)
        if c0.shape != (self.n,) * 3:
            raise ValueError(f"structure constants have shape {c0.shape}, expected {(self.n,) * 3}")
        if k0.shape != (self.dim, self.n, self.n):
            raise ValueError(f"connection has shape {k0.shape}, expected {(self.dim, self.n, self.n)}")

    def __repr__(self):
        return f"LieAlgebraBundleModel({self.name!r}, n={self.n}, m={self.dim})"

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def C(self, x) -> np.ndarray:
        return _as_array(self._C(list(x)))

    def K(self, x) -> np.ndarray:
        return _as_array(self._K(list(x)))

    def K_along(self, x, v) -> np.ndarray:
        """``v^i K_i(x)`` as a float matrix."""
        return np.einsum("i,iba->ba", np.asarray(v, dtype=float), self.K(x).astype(float))

    def dC(self, x, i: int) -> np.ndarray:
        """``dC/dx^i`` by forward-mode AD."""
        x = [float(v) for v in x]
        e = [0.0] * self.dim
        e[i] = 1.0
        d = ad.derivative(lambda p: list(np.asarray(self._C(p), dtype=object).ravel()), x, e)
        return np.asarray(d, dtype=float).reshape((self.n,) * 3)

    def random_points(self, rng: np.random.Generator, count: int, margin: float = 0.1) -> np.ndarray:
        w = self.upper - self.lower
        return rng.uniform(self.lower + margin * w, self.upper - margin * w, size=(count, self.dim))


@dataclass
class ParallelFrame:
    """Parallel frame along a curve.

    ``lam[k]`` is ``Lambda`` at global parameter ``t[k]``; ``frames[k]``
    holds the frame vectors as columns (``Lambda @ frame0``).
    """

    t: np.ndarray
    lam: np.ndarray
    frames: np.ndarray
    stats: IntegrationStats

    @property
    def final(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def transport_matrix(self) -> np.ndarray:
        return self.lam[-1]


def parallel_frame(
    model: LieAlgebraBundleModel,
    c: Curve,
    frame0=None,
    *,
    tol: float = 1e-12,
    t_end: float = 1.0,
) -> ParallelFrame:
    """Integrate the parallel-frame ODE along ``c`` on the global interval [0, t_end].

    Raises
    ------
    FrameDegenerateError
        If ``|det Lambda|`` drops below 1e-10.
    ValueError
        If ``frame0`` is singular.
    """
    n = model.n
    frame0 = np.eye(n) if frame0 is None else np.asarray(frame0, dtype=float)
    if abs(np.linalg.det(frame0)) < DET_FLOOR:
        raise ValueError("initial frame is not linearly independent")
    nseg = len(c.segments)
    lam = np.eye(n)
    ts, lams = [0.0], [lam.copy()]
    stats = IntegrationStats()
    for k in range(nseg):
        t0 = k / nseg
        if t0 >= t_end:
            break
        s_end = min(1.0, (t_end - t0) * nseg)

        def fun(s, y, k=k):
            x = c.segment_point(k, s)
            v = c.segment_velocity(k, s)
            return -model.K_along(x, v) @ y

        lam, st, nodes = dopri5(fun, 0.0, s_end, lam, rtol=tol, atol=tol, trace=True)
        stats = stats.merge(st)
        for s, y in nodes[1:]:
            det = np.linalg.det(y)
            if abs(det) < DET_FLOOR:
                raise FrameDegenerateError(f"frame degenerate near t={t0 + s / nseg:.6g}", ts[-1])
            ts.append(t0 + s / nseg)
            lams.append(y)
    lams = np.array(lams)
    return ParallelFrame(np.array(ts), lams, lams @ frame0, stats)


def parallel_frame_residual(
    model: LieAlgebraBundleModel,
    c: Curve,
    times: Sequence[float] = (0.25, 0.5, 0.75),
    h: float = 5e-4,
    tol: float = 1e-13,
) -> float:
    """Max ``|nabla_cdot eta_a|`` at ``times``.

    The derivative of the frame is taken by a five-point central difference
    of independent integrations from 0, so the check does not reuse the
    right-hand side the integrator saw.  Times must avoid curve joints.
    """
    worst = 0.0
    for t in times:
        lam = {}
        for j in (-2, -1, 0, 1, 2):
            lam[j] = parallel_frame(model, c, tol=tol, t_end=t + j * h).lam[-1]
        dlam = (lam[-2] - 8 * lam[-1] + 8 * lam[1] - lam[2]) / (12 * h)
        resid = dlam + model.K_along(c(t), c.velocity(t)) @ lam[0]
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst


def lie_connection_residual(model: LieAlgebraBundleModel, x, i: int) -> float:
    """Max coefficient of ``nabla_i [e_a, e_b] - [nabla_i e_a, e_b] - [e_a, nabla_i e_b]``."""
    C = model.C(x).astype(float)
    K = model.K(x).astype(float)[i]
    r = (
        model.dC(x, i)
        + np.einsum("dab,cd->cab", C, K)
        - np.einsum("cdb,da->cab", C, K)
        - np.einsum("cad,db->cab", C, K)
    )
    return float(np.max(np.abs(r)))


def jacobi_residual(model: LieAlgebraBundleModel, x) -> float:
    """Max coefficient of the Jacobi sum plus antisymmetry defect of C at x."""
    C = model.C(x).astype(float)
    # [[e_a, e_b], e_c] = C^d_ab C^e_dc e_e
    t = np.einsum("dab,edc->eabc", C, C)
    jac = t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)
    anti = C + C.transpose(0, 2, 1)
    return float(max(np.max(np.abs(jac)), np.max(np.abs(anti))))


def _bracket(C, v, w):
    return np.einsum("cab,a,b->c", C, v, w)


def transport_bracket_check(
    model: LieAlgebraBundleModel,
    c: Curve,
    pairs: Sequence[tuple[int, int]] | None = None,
    *,
    tol: float = 1e-12,
) -> float:
    """Max ``|tau[e_a, e_b] - [tau e_a, tau e_b]|`` over ``pairs`` (default: all a < b)."""
    n = model.n
    if pairs is None:
        pairs = list(itertools.combinations(range(n), 2))
    lam = parallel_frame(model, c, tol=tol).transport_matrix
    C0 = model.C(c.start).astype(float)
    C1 = model.C(c.end).astype(float)
    e = np.eye(n)
    worst = 0.0
    for a, b in pairs:
        lhs = lam @ _bracket(C0, e[a], e[b])
        rhs = _bracket(C1, lam[:, a], lam[:, b])
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def structure_constant_drift(model: LieAlgebraBundleModel, c: Curve, *, tol: float = 1e-12) -> float:
    """Max variation along ``c`` of the structure constants in the parallel frame."""
    pf = parallel_frame(model, c, tol=tol)
    ref = None
    worst = 0.0
    for t, lam in zip(pf.t, pf.lam):
        C = model.C(c(t)).astype(float)
        # [eta_a, eta_b] = Lambda^p_a Lambda^q_b C^r_pq e_r, expressed in eta
        Ct = np.linalg.solve(lam, np.einsum("rpq,pa,qb->rab", C, lam, lam).reshape(model.n, -1))
        Ct = Ct.reshape((model.n,) * 3)
        if ref is None:
            ref = Ct
        worst = max(worst, float(np.max(np.abs(Ct - ref))))
    return worst


def ray_frame(model: LieAlgebraBundleModel, origin, frame0=None, *, tol: float = 1e-12) -> Callable:
    """Local frame built by parallel transport along straight rays from ``origin``.

    Returns ``x -> matrix`` whose columns are the frame vectors at x.
    """
    origin = np.asarray(origin, dtype=float)
    frame0 = np.eye(model.n) if frame0 is None else np.asarray(frame0, dtype=float)

    def frame(x):
        x = np.asarray(x, dtype=float)
        if np.allclose(x, origin, rtol=0, atol=0):
            return frame0.copy()
        return parallel_frame(model, Curve.segment(origin, x), frame0, tol=tol).final

    return frame


# bridge from holonomy spans --------------------------------------------------


@dataclass
class HolonomyFrame:
    basis: list
    C: np.ndarray
    residual: float
    rank: int
    gap: float


def frame_from_holonomy(
    space: FinslerSpace,
    x,
    fields: Sequence,
    samples: np.ndarray | None = None,
    tol: float = 1e-8,
    min_gap: float = 1e4,
) -> HolonomyFrame:
    """Structure constants of the span of ``fields`` at x, fitted over samples.

    A maximal independent subset forms the basis; ``[V_a, V_b] = C^c_ab V_c``
    is solved by least squares on the sampled values and antisymmetrized.
    """
    from .holonomy_algebra import Bracket, _independent, _rows, indicatrix_samples, numerical_rank

    if samples is None:
        samples = indicatrix_samples(space, x)
    rows = _rows(list(fields), space, x, samples)
    rank, _, gap = numerical_rank(rows, tol)
    if rank == 0:
        return HolonomyFrame([], np.zeros((0, 0, 0)), 0.0, 0, gap)
    if gap <= min_gap:
        raise ValueError(f"span rank is ill-defined (gap {gap:.3g}); add samples or refine the field set")
    basis = _independent(list(fields), rows, tol)
    B = _rows(basis, space, x, samples).T
    n = len(basis)
    C = np.zeros((n, n, n))
    residual = 0.0
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            target = Bracket(basis[a], basis[b]).at(space, x, samples).ravel(order="F")
            coef, *_ = np.linalg.lstsq(B, target, rcond=None)
            C[:, a, b] = coef
            residual = max(residual, float(np.max(np.abs(B @ coef - target))))
    C = 0.5 * (C - C.transpose(0, 2, 1))
    return HolonomyFrame(basis, C, residual, rank, gap)


# fixtures --------------------------------------------------------------------


def scalar_model(k: float = 0.7) -> LieAlgebraBundleModel:
    """Line bundle over an interval with ``nabla e = k e``: Lambda(t) = exp(-k t) along x = t."""
    return LieAlgebraBundleModel(
        [-1.0], [2.0], 1, lambda x: [[[0.0]]], lambda x: [[[k + 0.0 * x[0]]]], name=f"scalar(k={k})"
    )


def so3_ad_model() -> LieAlgebraBundleModel:
    """so(3) with constant brackets and an ad-valued, x-dependent connection."""
    eps = levi_civita()

    def A(x):
        x1, x2 = x
        return [[ad.sin(x2), x1, 1.0 + 0.0 * x1], [x1 * x2, ad.cos(x1), 0.5 + 0.0 * x1]]

    def K(x):
        return [ad_matrix(eps, a) for a in A(x)]

    return LieAlgebraBundleModel([-1, -1], [1, 1], 3, lambda x: eps, K, name="so3-ad")


def non_derivation_model() -> LieAlgebraBundleModel:
    """so(3) with ``(K_1)^1_1 = 1``: not a derivation of the bracket."""
    eps = levi_civita()
    K = np.zeros((2, 3, 3))
    K[0, 0, 0] = 1.0
    return LieAlgebraBundleModel([-1, -1], [1, 1], 3, lambda x: eps, lambda x: K, name="non-derivation")


def so3_plus_line_model() -> LieAlgebraBundleModel:
    """so(3) + R with connection ``a_i(x) ad(e_3)``; span{e_1..e_3} and span{e_3, e_4} are both parallel."""
    eps = levi_civita()
    C = np.zeros((4, 4, 4))
    C[:3, :3, :3] = eps
    ad3 = np.zeros((4, 4))
    ad3[:3, :3] = ad_matrix(eps, [0.0, 0.0, 1.0]).astype(float)

    def K(x):
        x1, x2 = x
        return [ad3 * (1.0 + x2 * x2), ad3 * ad.sin(x1)]

    return LieAlgebraBundleModel([-1, -1], [1, 1], 4, lambda x: C, K, name="so3+R")


def model_from_config(cfg: dict) -> LieAlgebraBundleModel:
    """Build a model from expression matrices.

    ``cfg`` keys: ``lower``, ``upper``, ``n``, ``C`` (nested n x n x n list of
    expressions or numbers in x1..xm) and ``K`` (nested m x n x n, indexed
    ``K[i][b][a]``).  Fixture names ``scalar``, ``so3-ad``, ``non-derivation``
    and ``so3+R`` are accepted under ``fixture``.
    """
    fixtures = {
        "scalar": scalar_model,
        "so3-ad": so3_ad_model,
        "non-derivation": non_derivation_model,
        "so3+R": so3_plus_line_model,
    }
    if "fixture" in cfg:
        name = cfg["fixture"]
        if name not in fixtures:
            raise ValueError(f"unknown lie-bundle fixture {name!r}; known: {sorted(fixtures)}")
        return fixtures[name](**cfg.get("params", {}))
    lower, upper = cfg["lower"], cfg["upper"]
    names = [f"x{k + 1}" for k in range(len(lower))]

    def compile_tree(tree):
        if isinstance(tree, (list, tuple)):
            return [compile_tree(t) for t in tree]
        f = compile_expr(parse(str(tree), names=names), names)
        return lambda x, f=f: f(x) + 0.0 * x[0]

    def evaluator(tree):
        def ev(node, x):
            if isinstance(node, list):
                return [ev(t, x) for t in node]
            return node(x)

        return lambda x: ev(tree, x)

    return LieAlgebraBundleModel(
        lower, upper, int(cfg["n"]), evaluator(compile_tree(cfg["C"])), evaluator(compile_tree(cfg["K"])),
        name=cfg.get("name", "config"),
    )

