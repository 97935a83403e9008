"""Dense linear algebra, adaptive ODE integration and damped Newton iteration.

Everything here is a pure function of its inputs so that concurrent scenario
runs can share the module freely.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SingularMatrix, StepSizeUnderflow

PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class OdePath:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), dim)
    nfev: int = 0

    def __post_init__(self):
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one value vector per time is required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def lu_factor(a):
    """LU factorisation with partial (row) pivoting.

    Returns ``(lu, piv)`` where ``lu`` packs the unit-lower and upper factors
    and ``piv[k]`` is the row swapped into position ``k`` at step ``k``.
    Raises :class:`SingularMatrix` when a pivot falls below
    ``1e-12 * max_row_norm(a)``.
    """
    lu = np.array(a, dtype=float, copy=True)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ValueError(f"square matrix required, got shape {lu.shape}")
    n = lu.shape[0]
    scale = np.abs(lu).sum(axis=1).max() if n else 0.0
    floor = PIVOT_RTOL * scale
    piv = np.zeros(n, dtype=int)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        piv[k] = p
        if abs(lu[p, k]) <= floor or lu[p, k] == 0.0:
            raise SingularMatrix(f"pivot {abs(lu[p, k]):.3e} at column {k} below {floor:.3e}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, piv


def lu_solve(factors, b):
    lu, piv = factors
    x = np.array(b, dtype=float, copy=True)
    n = lu.shape[0]
    for k in range(n):
        p = piv[k]
        if p != k:
            x[[k, p]] = x[[p, k]]
    for k in range(n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1:] @ x[k + 1:]) / lu[k, k]
    return x


def linear_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"rhs length {b.shape[0]} does not match matrix side {a.shape[0]}")
    return lu_solve(lu_factor(a), b)


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th order and embedded 4th order weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_UNDERFLOW_RTOL = 1e-14


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _initial_step(f, t0, y0, f0, direction_span, rtol, atol):
    # Hairer, Norsett & Wanner, Solving ODEs I, sec. II.4
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


def integrate_adaptive(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_span,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    max_step: float = np.inf,
    first_step: float | None = None,
    max_steps: int | None = None,
) -> OdePath:
    """Integrate ``y' = f(t, y)`` with the Dormand-Prince 5(4) embedded pair.

    Local error control is per component against ``atol + rtol * |y|`` in
    the RMS norm, advancing with the 5th order solution. The last step is
    clamped so the path ends exactly at ``t_span[1]``.

    Raises :class:`StepSizeUnderflow` if the controller asks for a step
    smaller than ``1e-14 * (tf - t0)``, or after ``max_steps`` attempted
    steps when a budget is given.
    """
    t0, tf = float(t_span[0]), float(t_span[1])
    if not tf > t0:
        raise ValueError("t_span must satisfy t0 < tf")
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("y0 must be finite")

    span = tf - t0
    h_min = _UNDERFLOW_RTOL * span
    k = np.empty((7, y.size))
    k[0] = f(t0, y)
    nfev = 1
    if first_step is None:
        h = _initial_step(f, t0, y, k[0], span, rtol, atol)
        nfev += 1
    else:
        h = first_step
    h = min(h, max_step)

    times = [t0]
    values = [y.copy()]
    t = t0
    attempts = 0
    while t < tf:
        if h < h_min:
            raise StepSizeUnderflow(f"step {h:.3e} below {h_min:.3e} at t={t:.6g}", t=t)
        attempts += 1
        if max_steps is not None and attempts > max_steps:
            raise StepSizeUnderflow(f"step budget {max_steps} exhausted at t={t:.6g}", t=t)
        last = t + h >= tf or tf - (t + h) < h_min
        if last:
            h = tf - t
        for s in range(1, 7):
            ys = y + h * (np.asarray(_DP_A[s]) @ k[:s])
            k[s] = f(t + _DP_C[s] * h, ys)
        nfev += 6
        y_new = y + h * (_DP_B @ k)
        err = h * (_DP_E @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms(err / scale)

        if not np.all(np.isfinite(y_new)) or not np.isfinite(err_norm):
            h *= _MIN_FACTOR
            continue
        if err_norm <= 1.0:
            t = tf if last else t + h
            y = y_new
            times.append(t)
            values.append(y.copy())
            k[0] = k[6]  # FSAL
            factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            h = min(h * factor, max_step)
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)

    return OdePath(np.array(times), np.array(values), nfev)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

MAX_HALVINGS = 8
MAX_STALLS = 3


def newton_damped(residual, jacobian, x0, max_iter: int = 50, tol: float = 1e-10,
                  solve=None):
    """Damped Newton iteration for ``residual(x) = 0``.

    Each full Newton step is halved up to eight times until the residual's
    2-norm decreases; if no halving helps, the full step is taken and counted
    as a stall. Three consecutive stalls, or ``max_iter`` iterations, end the
    run unconverged.

    ``solve(J, r)`` defaults to :func:`linear_solve`; callers with sparse
    Jacobians pass their own. A singular Jacobian at ``x0`` raises
    :class:`SingularMatrix`; one met at a later iterate ends the run
    unconverged.

    Returns ``(root, converged, iterations)``.
    """
    solve = linear_solve if solve is None else solve
    x = np.array(x0, dtype=float)
    r = np.asarray(residual(x), dtype=float)
    if np.max(np.abs(r), initial=0.0) <= tol:
        return x, True, 0

    stalls = 0
    for it in range(1, max_iter + 1):
        try:
            step = solve(jacobian(x), -r)
        except SingularMatrix:
            if it == 1:
                raise
            return x, False, it - 1
        norm = np.linalg.norm(r)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_try = x + lam * step
            r_try = np.asarray(residual(x_try), dtype=float)
            if np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < norm:
                stalls = 0
                break
            lam *= 0.5
        else:
            stalls += 1
            x_try = x + step
            r_try = np.asarray(residual(x_try), dtype=float)
        x, r = x_try, r_try
        if np.all(np.isfinite(r)) and np.max(np.abs(r), initial=0.0) <= tol:
            return x, True, it
        if stalls >= MAX_STALLS or not np.all(np.isfinite(r)):
            return x, False, it
    return x, False, max_iter


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def hermite_interpolate(times, values, derivs, t_query):
    """Piecewise cubic Hermite interpolation through values and slopes."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    derivs = np.asarray(derivs, dtype=float)
    tq = np.atleast_1d(np.asarray(t_query, dtype=float))
    idx = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, len(times) - 2)
    h = (times[idx + 1] - times[idx])[:, None]
    s = ((tq - times[idx])[:, None]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    out = (h00 * values[idx] + h10 * h * derivs[idx]
           + h01 * values[idx + 1] + h11 * h * derivs[idx + 1])
    return out if np.ndim(t_query) else out[0]
