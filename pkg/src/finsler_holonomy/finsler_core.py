"""Connection data of a Finsler space on a single chart.

Conventions (fixed throughout the package)::

    L        = F**2                                   energy
    g_ab     = 1/2 d^2 L / du^a du^b                  fundamental tensor
    G^i      = 1/4 g^il (u^k d^2L/du^l dx^k - dL/dx^l) geodesic spray
    N^i_j    = dG^i / du^j                            nonlinear connection
    B^i_jk   = dN^i_j / du^k                          Berwald coefficients
    H_i      = d/dx^i - N^j_i d/du^j                  horizontal frame

With these factors a Riemannian metric has ``2 G^i = Gamma^i_jk u^j u^k``
and Berwald coefficients equal to its Christoffel symbols.

The ``FinslerSpace`` methods are generic: ``x`` and ``u`` are lists whose
entries may be floats, numpy arrays (sample batches) or ``DiffScalar``
towers, so every quantity can be differentiated again.  The module-level
functions are the float-valued front end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .metric_expr import MetricSpec, builtin, check_homogeneity

__all__ = [
    "GeometryError",
    "FinslerSpace",
    "ConnectionData",
    "fundamental_tensor",
    "spray",
    "nonlinear_connection",
    "berwald_coefficients",
    "connection_data",
    "indicatrix_point",
    "landsberg_residual",
    "isometry_residual",
    "berwald_residual",
    "horizontal_lift_field",
]

# derivative orders of L spent inside the fundamental tensor
TENSOR_ORDERS = 2


class GeometryError(ValueError):
    """The Finsler data is unusable at a point (or everywhere)."""


def _basis(n, k):
    e = [0.0] * n
    e[k] = 1.0
    return e


def _solve_spd(a, b):
    """Solve ``a y = b`` for a small symmetric positive-definite ``a``.

    Plain Gaussian elimination without pivoting, written against carrier
    arithmetic so it can be differentiated.
    """
    n = len(b)
    a = [list(row) for row in a]
    b = list(b)
    for k in range(n):
        piv = a[k][k]
        for i in range(k + 1, n):
            f = a[i][k] / piv
            for j in range(k + 1, n):
                a[i][j] = a[i][j] - f * a[k][j]
            b[i] = b[i] - f * b[k]
    y = [0.0] * n
    for i in reversed(range(n)):
        s = b[i]
        for j in range(i + 1, n):
            s = s - a[i][j] * y[j]
        y[i] = s / a[i][i]
    return y


class FinslerSpace:
    """A Finsler function on an open coordinate box.

    Construction checks positive 1-homogeneity and positive-definiteness of
    the fundamental tensor on a deterministic sample grid; pass
    ``validate=False`` to skip (the checks are what makes the derived
    geometry meaningful, so only skip them for deliberately broken inputs).
    """

    def __init__(self, metric: MetricSpec, *, validate: bool = True):
        self.metric = metric
        self.dim = metric.dim
        self.lower = np.asarray(metric.lower, dtype=float)
        self.upper = np.asarray(metric.upper, dtype=float)
        self._f = metric.compile()
        if validate:
            self.validate()

    @classmethod
    def builtin(cls, name: str, **params) -> "FinslerSpace":
        return cls(builtin(name, **params))

    def __repr__(self):
        return f"FinslerSpace({self.metric.name!r}, dim={self.dim}, F={self.metric.text!r})"

    @property
    def name(self) -> str:
        return self.metric.name

    # sampling helpers -------------------------------------------------------

    def interior_grid(self, per_axis: int = 3, margin: float = 0.15) -> np.ndarray:
        """Grid of base points strictly inside the chart box, shape (n, m)."""
        axes = [
            np.linspace(lo + margin * (hi - lo), hi - margin * (hi - lo), per_axis)
            for lo, hi in zip(self.lower, self.upper)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def random_points(self, rng: np.random.Generator, n: int, margin: float = 0.1) -> np.ndarray:
        span = self.upper - self.lower
        lo = self.lower + margin * span
        return lo + rng.random((n, self.dim)) * (1 - 2 * margin) * span

    def contains(self, x) -> bool:
        return self.metric.contains(x)

    def validate(self, tol: float = 1e-12) -> None:
        rng = np.random.default_rng(20240601)
        samples = []
        for x in self.interior_grid():
            for _ in range(4):
                u = rng.normal(size=self.dim)
                samples.append((x, u, float(rng.uniform(0.2, 5.0))))
        scale = max(1.0, max(abs(lam * float(self._f(list(x), list(u)))) for x, u, lam in samples))
        resid = check_homogeneity(self.metric, samples)
        if not resid <= tol * scale:
            raise GeometryError(
                f"{self.metric.text!r} is not positively 1-homogeneous in u "
                f"(residual {resid:.3e})"
            )
        for x, u, _ in samples:
            g = fundamental_tensor(self, x, u)
            if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g)[0] <= 0:
                raise GeometryError(f"fundamental tensor not positive-definite at x={x}, u={u}")

    # generic quantities -----------------------------------------------------

    def F(self, x, u):
        return self._f(x, u)

    def energy(self, x, u):
        f = self._f(x, u)
        return f * f

    def _l_of(self, x):
        return lambda uu: self.energy(x, uu)

    def fundamental_tensor(self, x, u):
        m = self.dim
        g = [[None] * m for _ in range(m)]
        with ad.raised_depth_cap(TENSOR_ORDERS):
            for a in range(m):
                ea = _basis(m, a)
                first = lambda uu, ea=ea: ad.derivative(self._l_of(x), uu, ea)  # noqa: E731
                for b in range(a, m):
                    g[a][b] = 0.5 * ad.derivative(first, u, _basis(m, b))
                    g[b][a] = g[a][b]
        return g

    def spray(self, x, u):
        m = self.dim
        g = self.fundamental_tensor(x, u)
        with ad.raised_depth_cap(TENSOR_ORDERS):
            # D_(u, 0) L as a function of u; its u-gradient is u^k d2L/du^l dx^k
            def transported(uu):
                return ad.derivative(lambda xx: self.energy(xx, uu), x, u)

            rhs = []
            for l in range(m):
                el = _basis(m, l)
                mixed = ad.derivative(transported, u, el)
                dx = ad.derivative(lambda xx: self.energy(xx, u), x, el)
                rhs.append(mixed - dx)
        y = _solve_spd(g, rhs)
        return [0.25 * yi for yi in y]

    def connection_dot(self, x, u, w):
        """``N^i_j w^j``: derivative of the spray along the fibre direction w."""
        return ad.derivative(lambda uu: self.spray(x, uu), u, list(w))

    def connection_column(self, x, u, j):
        """``N^i_j`` for fixed ``j`` (the vertical part of ``-H_j``)."""
        return self.connection_dot(x, u, _basis(self.dim, j))

    def nonlinear_connection(self, x, u):
        cols = [self.connection_column(x, u, j) for j in range(self.dim)]
        return [[cols[j][i] for j in range(self.dim)] for i in range(self.dim)]

    def berwald(self, x, u):
        """Nested list ``B[i][j][k]``."""
        m = self.dim
        out = [[[None] * m for _ in range(m)] for _ in range(m)]
        for j in range(m):
            for k in range(j, m):
                col = ad.derivative(
                    lambda uu, j=j: self.connection_column(x, uu, j), u, _basis(m, k)
                )
                for i in range(m):
                    out[i][j][k] = out[i][k][j] = col[i]
        return out

    def horizontal_derivative(self, fn, x, u, X):
        """``X^H(fn)`` at (x, u) for a function ``fn(x, u)`` of carriers."""
        m = self.dim
        vert = self.connection_dot(x, u, X)
        direction = list(X) + [-v for v in vert]
        return ad.derivative(lambda z: fn(z[:m], z[m:]), list(x) + list(u), direction)

    def vertical_derivative(self, fn, x, u, V):
        """``V(fn)`` for a vertical vector ``V`` at (x, u)."""
        return ad.derivative(lambda uu: fn(x, uu), u, list(V))


@dataclass
class ConnectionData:
    g: np.ndarray
    g_inv: np.ndarray
    spray: np.ndarray
    nonlinear: np.ndarray
    berwald: np.ndarray


def _point(space, x, u):
    x = [float(v) for v in np.asarray(x, dtype=float).ravel()]
    u = [float(v) for v in np.asarray(u, dtype=float).ravel()]
    if len(x) != space.dim or len(u) != space.dim:
        raise ValueError(f"expected {space.dim} coordinates for x and u")
    if not any(u):
        raise GeometryError("u must be nonzero (slit tangent bundle)")
    return x, u


def _floats(a):
    return np.asarray(a, dtype=float)


def fundamental_tensor(space: FinslerSpace, x, u) -> np.ndarray:
    x, u = _point(space, x, u)
    g = _floats(space.fundamental_tensor(x, u))
    if not np.all(np.isfinite(g)):
        raise GeometryError(f"fundamental tensor not finite at x={x}, u={u}")
    if np.linalg.eigvalsh(g)[0] <= 0:
        raise GeometryError(f"fundamental tensor not positive-definite at x={x}, u={u}")
    return g


def spray(space: FinslerSpace, x, u) -> np.ndarray:
    x, u = _point(space, x, u)
    return _floats(space.spray(x, u))


def nonlinear_connection(space: FinslerSpace, x, u) -> np.ndarray:
    """Matrix ``N[i, j] = dG^i/du^j``."""
    x, u = _point(space, x, u)
    return _floats(space.nonlinear_connection(x, u))


def berwald_coefficients(space: FinslerSpace, x, u) -> np.ndarray:
    """Array ``B[i, j, k] = d^2 G^i / du^j du^k``."""
    x, u = _point(space, x, u)
    return _floats(space.berwald(x, u))


def connection_data(space: FinslerSpace, x, u) -> ConnectionData:
    g = fundamental_tensor(space, x, u)
    return ConnectionData(
        g=g,
        g_inv=np.linalg.inv(g),
        spray=spray(space, x, u),
        nonlinear=nonlinear_connection(space, x, u),
        berwald=berwald_coefficients(space, x, u),
    )


def indicatrix_point(space: FinslerSpace, x, d) -> np.ndarray:
    """Rescale ``d`` onto the indicatrix ``F(x, u) = 1`` using 1-homogeneity."""
    d = _floats(d).ravel()
    if not np.any(d):
        raise GeometryError("direction must be nonzero")
    f = float(space.F([float(v) for v in _floats(x).ravel()], [float(v) for v in d]))
    if not f > 0:
        raise GeometryError(f"F(x, d) = {f} is not positive")
    return d / f


def landsberg_residual(space: FinslerSpace, x, u, X, V, W) -> float:
    """``(nabla_X g)(V, W)`` at (x, u) with V, W constant fibre vectors.

    Expands to ``X^H(g(V, W)) - g(nabla_X V, W) - g(V, nabla_X W)`` where
    ``(nabla_X V)^k = B^k_jl X^j V^l`` for a fibre-constant V.
    """
    x, u = _point(space, x, u)
    X, V, W = (list(_floats(v).ravel()) for v in (X, V, W))
    m = space.dim

    def gvw(xx, uu):
        g = space.fundamental_tensor(xx, uu)
        return sum(g[a][b] * V[a] * W[b] for a in range(m) for b in range(m))

    lie = float(space.horizontal_derivative(gvw, x, u, X))
    b = berwald_coefficients(space, x, u)
    g = fundamental_tensor(space, x, u)
    nab_v = np.einsum("kjl,j,l->k", b, X, V)
    nab_w = np.einsum("kjl,j,l->k", b, X, W)
    return lie - float(nab_v @ g @ np.asarray(W)) - float(np.asarray(V) @ g @ nab_w)


def horizontal_lift_field(space: FinslerSpace, X):
    """Vertical part of ``X^H`` as a generic field ``(x, u) -> -N(x, u) X``."""
    X = list(_floats(X).ravel())

    def eta(x, u):
        return [-v for v in space.connection_dot(x, u, X)]

    return eta


def _field_fn(space, eta):
    if hasattr(eta, "evaluate"):
        return lambda x, u: eta.evaluate(space, x, u)
    return eta


def isometry_residual(space: FinslerSpace, x, u, xi, eta) -> float:
    """Residual of the infinitesimal fibre-isometry equation.

    ``Z = xi^i d/dx^i + eta^a(u) d/du^a`` preserves the fibre metric to first
    order iff, for all a, b::

        xi^i dg_ab/dx^i + eta^c dg_ab/du^c + g_cb deta^c/du^a + g_ac deta^c/du^b = 0

    Returns the max absolute entry of the left-hand side.  ``eta`` is a
    generic callable ``eta(x, u)`` or an object with ``evaluate``.
    """
    x, u = _point(space, x, u)
    xi = list(_floats(xi).ravel())
    m = space.dim
    eta = _field_fn(space, eta)
    eta_val = [float(v) for v in eta(x, u)]
    z = xi + eta_val
    dg = _floats(
        ad.derivative(lambda p: space.fundamental_tensor(p[:m], p[m:]), x + u, z)
    )
    jac = np.column_stack(
        [_floats(ad.derivative(lambda uu: eta(x, uu), u, _basis(m, a))) for a in range(m)]
    )  # jac[c, a] = d eta^c / du^a
    g = fundamental_tensor(space, x, u)
    lhs = dg + jac.T @ g + g @ jac
    return float(np.max(np.abs(lhs)))


def berwald_residual(space: FinslerSpace, x, u) -> float:
    """Max of ``|dB^i_jk / du^l|``; zero exactly when B is fibre-constant."""
    x, u = _point(space, x, u)
    m = space.dim
    worst = 0.0
    for j in range(m):
        for k in range(j, m):
            for l in range(k, m):
                d = ad.derivative(
                    lambda uu, j=j, k=k: ad.derivative(
                        lambda vv: space.connection_column(x, vv, j), uu, _basis(m, k)
                    ),
                    u,
                    _basis(m, l),
                )
                worst = max(worst, float(np.max(np.abs(_floats(d)))))
    return worst
