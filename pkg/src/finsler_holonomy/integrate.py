"""Adaptive Dormand-Prince 5(4) integrator.

Works on numpy arrays of any shape, so whole sample batches are advanced by
one step-size controller.  Statistics are kept because the transport
diagnostics report them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["IntegrationError", "IntegrationStats", "dopri5"]

# Dormand & Prince (1980), 5th-order solution propagated
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
# difference between the 5th- and embedded 4th-order weights
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    pass


@dataclass
class IntegrationStats:
    steps: int = 0
    rejected: int = 0
    nfev: int = 0
    max_error: float = 0.0  # largest accepted local error estimate (abs)

    def merge(self, other: "IntegrationStats") -> "IntegrationStats":
        return IntegrationStats(
            self.steps + other.steps,
            self.rejected + other.rejected,
            self.nfev + other.nfev,
            max(self.max_error, other.max_error),
        )

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "rejected": self.rejected,
            "nfev": self.nfev,
            "max_error": self.max_error,
        }


@dataclass
class _Trace:
    t: list = field(default_factory=list)
    y: list = field(default_factory=list)


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri5(
    fun,
    t0: float,
    t1: float,
    y0,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    first_step: float | None = None,
    max_steps: int = 200_000,
    trace: bool = False,
):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1``.

    Returns ``(y1, stats, nodes)`` where ``nodes`` is a list of
    ``(t, y)`` pairs at every accepted step (including ``t0``) when
    ``trace`` is true, else ``None``.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    t1 = float(t1)
    stats = IntegrationStats()
    nodes = _Trace() if trace else None
    if nodes is not None:
        nodes.t.append(t)
        nodes.y.append(y.copy())
    if t1 == t:
        return y, stats, (list(zip(nodes.t, nodes.y)) if nodes else None)
    direction = 1.0 if t1 > t else -1.0
    f = np.asarray(fun(t, y), dtype=float)
    stats.nfev += 1
    if first_step is None:
        h = _initial_step(fun, t, y, f, direction, rtol, atol)
        stats.nfev += 1
    else:
        h = float(first_step)
    h = min(h, abs(t1 - t))
    k = [None] * 7
    while True:
        if stats.steps + stats.rejected >= max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps at t={t}")
        remaining = abs(t1 - t)
        last = h >= remaining
        if last:
            h = remaining
        min_h = 10 * np.spacing(max(abs(t), abs(t1)))
        if h < min_h:
            raise IntegrationError(f"step size underflow at t={t}")
        hs = direction * h
        k[0] = f
        for s in range(1, 7):
            ys = y + hs * sum(a * kk for a, kk in zip(_A[s], k[:s]) if a != 0.0)
            k[s] = np.asarray(fun(t + _C[s] * hs, ys), dtype=float)
        stats.nfev += 6
        y_new = y + hs * sum(b * kk for b, kk in zip(_B[:6], k[:6]) if b != 0.0)
        err = hs * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(err))):
            raise IntegrationError(f"non-finite state at t={t}")
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        if err_norm <= 1.0:
            t = t1 if last else t + hs
            y = y_new
            f = k[6]
            stats.steps += 1
            stats.max_error = max(stats.max_error, float(np.max(np.abs(err))) if err.size else 0.0)
            if nodes is not None:
                nodes.t.append(t)
                nodes.y.append(y.copy())
            if last:
                break
            factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            h = h * factor
        else:
            stats.rejected += 1
            h = h * max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
    return y, stats, (list(zip(nodes.t, nodes.y)) if nodes else None)
