"""Cubic Hermite (Lobatto IIIA) collocation for two-point boundary value
problems, with bisection mesh refinement and the restart loop used to push
the herding BVP to convergence.

Vector fields passed to this module are evaluated on whole meshes at once:
``ode(t, Y)`` takes ``t`` of shape (N,) and ``Y`` of shape (N, D) and returns
(N, D); ``ode_jacobian(t, Y)`` returns (N, D, D); ``bc(ya, yb)`` returns the
boundary residual of length D.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import ScenarioSpec, Trajectory, trajectory_cost
from .errors import MissingControls, SingularMatrix
from .numkernel import hermite_interpolate, newton_damped
from .pmp import (augmented_deriv, augmented_jacobian, augmented_size,
                  boundary_jacobians, boundary_residual, optimal_control)

log = logging.getLogger(__name__)

# Newton is run this much tighter than the refinement tolerance
NEWTON_TOL_FACTOR = 1e-2


@dataclass
class Mesh:
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.nodes.size < 3:
            raise ValueError("a mesh needs at least 3 nodes")
        if self.values.shape[0] != self.nodes.size:
            raise ValueError("one value vector per node required")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")

    def __len__(self):
        return self.nodes.size

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class BvpOptions:
    residual_tol: float = 1e-3
    max_nodes: int = 5000
    max_newton_iter: int = 20
    max_restarts: int = 30
    newton_tol: float | None = None  # defaults to residual_tol * NEWTON_TOL_FACTOR

    def __post_init__(self):
        if min(self.residual_tol, self.max_nodes, self.max_newton_iter, self.max_restarts) <= 0:
            raise ValueError("BvpOptions fields must be positive")
        if self.newton_tol is None:
            self.newton_tol = NEWTON_TOL_FACTOR * self.residual_tol


@dataclass
class SolverReport:
    converged: bool
    restarts_used: int = 0
    newton_iterations: int = 0
    max_rms_residual: float = np.inf
    final_cost: float = np.nan
    message: str = ""
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# collocation residual and Jacobian
# ---------------------------------------------------------------------------

def _hermite_pieces(t, Y, F):
    h = np.diff(t)[:, None]
    y_mid = 0.5 * (Y[:-1] + Y[1:]) - h / 8 * (F[1:] - F[:-1])
    yp_mid = 1.5 * (Y[1:] - Y[:-1]) / h - 0.25 * (F[:-1] + F[1:])
    return h, y_mid, yp_mid


def _cubic_at(t, Y, F, s):
    """Value and slope of each interval's cubic at fractional position ``s``."""
    h = np.diff(t)[:, None]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    y = h00 * Y[:-1] + h10 * h * F[:-1] + h01 * Y[1:] + h11 * h * F[1:]
    d00 = 6 * s * s - 6 * s
    d10 = 3 * s * s - 4 * s + 1
    d11 = 3 * s * s - 2 * s
    yp = d00 * (Y[:-1] - Y[1:]) / h + d10 * F[:-1] + d11 * F[1:]
    return y, yp


def collocation_residual(mesh: Mesh, ode, bc) -> np.ndarray:
    """Midpoint collocation defects of every interval, followed by ``bc``.

    Length is ``(intervals + 1) * D``.
    """
    t, Y = mesh.nodes, mesh.values
    F = ode(t, Y)
    h, y_mid, yp_mid = _hermite_pieces(t, Y, F)
    t_mid = t[:-1] + 0.5 * h[:, 0]
    r = yp_mid - ode(t_mid, y_mid)
    return np.concatenate([r.ravel(), np.asarray(bc(Y[0], Y[-1]), dtype=float)])


def _fd_bc_jacobian(bc, ya, yb, step=1e-7):
    base = np.asarray(bc(ya, yb), dtype=float)
    ja = np.empty((base.size, ya.size))
    jb = np.empty((base.size, yb.size))
    for k in range(ya.size):
        e = np.zeros(ya.size)
        e[k] = step * max(1.0, abs(ya[k]))
        ja[:, k] = (np.asarray(bc(ya + e, yb)) - base) / e[k]
        e[k] = step * max(1.0, abs(yb[k]))
        jb[:, k] = (np.asarray(bc(ya, yb + e)) - base) / e[k]
    return ja, jb


def collocation_jacobian(mesh: Mesh, ode, ode_jacobian, bc, bc_jacobian=None):
    """Sparse Jacobian of :func:`collocation_residual` in all node values."""
    t, Y = mesh.nodes, mesh.values
    n_nodes, D = Y.shape
    F = ode(t, Y)
    JF = ode_jacobian(t, Y)
    h, y_mid, _ = _hermite_pieces(t, Y, F)
    t_mid = t[:-1] + 0.5 * h[:, 0]
    Jm = ode_jacobian(t_mid, y_mid)
    eye = np.eye(D)
    hh = h[:, :, None]
    # d y_mid / d Y_k and / d Y_{k+1}
    dmid_l = 0.5 * eye + hh / 8 * JF[:-1]
    dmid_r = 0.5 * eye - hh / 8 * JF[1:]
    left = -1.5 / hh * eye - 0.25 * JF[:-1] - Jm @ dmid_l
    right = 1.5 / hh * eye - 0.25 * JF[1:] - Jm @ dmid_r

    n_int = n_nodes - 1
    rows_blk = np.arange(D)[:, None] + np.zeros((1, D), dtype=int)
    cols_blk = np.arange(D)[None, :] + np.zeros((D, 1), dtype=int)
    k = np.arange(n_int)[:, None, None]
    rows = np.concatenate([(k * D + rows_blk).ravel(), (k * D + rows_blk).ravel()])
    cols = np.concatenate([(k * D + cols_blk).ravel(), ((k + 1) * D + cols_blk).ravel()])
    vals = np.concatenate([left.ravel(), right.ravel()])

    if bc_jacobian is None:
        ja, jb = _fd_bc_jacobian(bc, Y[0], Y[-1])
    else:
        ja, jb = bc_jacobian(Y[0], Y[-1])
    m_bc = ja.shape[0]
    r0 = n_int * D
    br = np.repeat(np.arange(m_bc), D)
    bcol = np.tile(np.arange(D), m_bc)
    rows = np.concatenate([rows, r0 + br, r0 + br])
    cols = np.concatenate([cols, bcol, (n_nodes - 1) * D + bcol])
    vals = np.concatenate([vals, np.ravel(ja), np.ravel(jb)])
    size = n_nodes * D
    return sp.csc_matrix((vals, (rows, cols)), shape=(r0 + m_bc, size))


def _sparse_solve(jac, rhs):
    try:
        x = spla.splu(sp.csc_matrix(jac)).solve(rhs)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("non-finite Newton step")
    return x


def interval_residuals(mesh: Mesh, ode) -> np.ndarray:
    """Normalised defect of each interval.

    For every component the defect ``y_c' - f(y_c)`` of the interval cubic is
    divided by ``1 + |f(y_c)|`` and RMS-averaged over the two quarter points;
    the interval's value is the worst component, or the normalised midpoint
    defect if that is larger (it only is when Newton has not converged).
    """
    t, Y = mesh.nodes, mesh.values
    F = ode(t, Y)
    h = np.diff(t)
    out = np.zeros(t.size - 1)
    sq = np.zeros((t.size - 1, Y.shape[1]))
    for s in (0.25, 0.75):
        y, yp = _cubic_at(t, Y, F, s)
        f = ode(t[:-1] + s * h, y)
        sq += ((yp - f) / (1 + np.abs(f))) ** 2
    out = np.sqrt(sq / 2).max(axis=1)
    y, yp = _cubic_at(t, Y, F, 0.5)
    f = ode(t[:-1] + 0.5 * h, y)
    mid = (np.abs(yp - f) / (1 + np.abs(f))).max(axis=1)
    return np.maximum(out, mid)


def _bisect(mesh: Mesh, ode, mask) -> Mesh:
    t, Y = mesh.nodes, mesh.values
    F = ode(t, Y)
    y_mid, _ = _cubic_at(t, Y, F, 0.5)
    idx = np.flatnonzero(mask)
    new_t = np.insert(t, idx + 1, 0.5 * (t[idx] + t[idx + 1]))
    new_Y = np.insert(Y, idx + 1, y_mid[idx], axis=0)
    return Mesh(new_t, new_Y)


def resample(mesh: Mesh, ode, nodes) -> Mesh:
    """Evaluate the mesh's piecewise cubic on a new set of nodes."""
    F = ode(mesh.nodes, mesh.values)
    return Mesh(nodes, hermite_interpolate(mesh.nodes, mesh.values, F, nodes))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def solve_collocation(ode, ode_jacobian, bc, initial_mesh: Mesh, opts: BvpOptions | None = None,
                      bc_jacobian=None):
    """Solve a two-point BVP by collocation with adaptive bisection.

    Newton (damped, sparse LU) solves for all node values at once; then
    every interval whose normalised defect exceeds ``opts.residual_tol`` is
    bisected and the cycle repeats. Exhausting ``opts.max_nodes`` is a soft
    failure: the current mesh comes back with ``converged=False`` and
    ``message='max_nodes'``. A singular Newton matrix at the start of a
    cycle raises :class:`SingularMatrix`.

    Returns ``(mesh, report)``.
    """
    opts = opts or BvpOptions()
    mesh = Mesh(initial_mesh.nodes.copy(), initial_mesh.values.copy())
    D = mesh.dim
    newton_tol = opts.newton_tol
    total_iter = 0

    while True:
        t = mesh.nodes

        def residual(z, t=t):
            return collocation_residual(Mesh(t, z.reshape(-1, D)), ode, bc)

        def jacobian(z, t=t):
            return collocation_jacobian(Mesh(t, z.reshape(-1, D)), ode, ode_jacobian, bc, bc_jacobian)

        z, newton_ok, iters = newton_damped(residual, jacobian, mesh.values.ravel(),
                                            max_iter=opts.max_newton_iter, tol=newton_tol,
                                            solve=_sparse_solve)
        total_iter += iters
        candidate = Mesh(t, z.reshape(-1, D))
        if np.all(np.isfinite(candidate.values)):
            mesh = candidate
        res = interval_residuals(mesh, ode)
        bc_norm = float(np.max(np.abs(bc(mesh.values[0], mesh.values[-1])), initial=0.0))
        worst = float(np.max(res))
        log.debug("collocation: %d nodes, newton_ok=%s iters=%d worst=%.3e bc=%.3e",
                  len(mesh), newton_ok, iters, worst, bc_norm)
        bad = res > opts.residual_tol
        if not bad.any() and bc_norm <= opts.residual_tol:
            return mesh, SolverReport(True, 1, total_iter, worst, message="converged",
                                      diagnostics={"nodes": len(mesh), "bc_norm": bc_norm})
        if not bad.any():
            bad = np.ones_like(bad)
        if len(mesh) + int(bad.sum()) > opts.max_nodes:
            return mesh, SolverReport(False, 1, total_iter, worst, message="max_nodes",
                                      diagnostics={"nodes": len(mesh), "bc_norm": bc_norm})
        mesh = _bisect(mesh, ode, bad)


def pmp_system(spec: ScenarioSpec, literal_sheep_costate: bool = False):
    """The herding BVP as ``(ode, ode_jacobian, bc, bc_jacobian)`` callables."""
    ja, jb = boundary_jacobians(spec)

    def ode(t, Y):
        return augmented_deriv(Y, spec, literal_sheep_costate)

    def ode_jacobian(t, Y):
        return augmented_jacobian(Y, spec, literal_sheep_costate)

    def bc(ya, yb):
        return boundary_residual(ya, yb, spec)

    def bc_jacobian(ya, yb):
        return ja, jb

    return ode, ode_jacobian, bc, bc_jacobian


def mesh_to_trajectory(mesh: Mesh, spec: ScenarioSpec) -> Trajectory:
    S = spec.state_size
    return Trajectory(mesh.nodes.copy(), mesh.values[:, :S].copy(),
                      controls=optimal_control(mesh.values, spec),
                      costates=mesh.values[:, S:].copy())


def solve_with_restarts(spec: ScenarioSpec, guess: Mesh, opts: BvpOptions | None = None,
                        literal_sheep_costate: bool = False):
    """Collocation solve of the herding BVP, restarting from the last iterate.

    Whenever a solve runs out of mesh nodes, its piecewise cubic is sampled
    back onto the guess's node set and used as the next starting point. Stops
    on convergence, on a hard Newton failure, or after ``opts.max_restarts``
    solves. ``report.restarts_used`` counts solver calls.

    Returns ``(trajectory, report)``; the trajectory is best-effort when
    ``report.converged`` is False.
    """
    opts = opts or BvpOptions()
    if guess.dim != augmented_size(spec):
        raise ValueError(f"guess dimension {guess.dim} != augmented size {augmented_size(spec)}")
    ode, ode_jac, bc, bc_jac = pmp_system(spec, literal_sheep_costate)
    current = guess
    mesh = guess
    report = SolverReport(False)
    total_iter = 0
    calls = 0
    for calls in range(1, opts.max_restarts + 1):
        try:
            mesh, rep = solve_collocation(ode, ode_jac, bc, current, opts, bc_jac)
        except SingularMatrix as exc:
            log.warning("restart %d: singular Newton matrix (%s)", calls, exc)
            report = SolverReport(False, message=f"singular: {exc}")
            break
        total_iter += rep.newton_iterations
        report = rep
        log.info("restart %d: %s, %d nodes, worst residual %.3e",
                 calls, rep.message, rep.diagnostics.get("nodes", 0), rep.max_rms_residual)
        if rep.converged:
            break
        current = resample(mesh, ode, guess.nodes)
    report.restarts_used = calls
    report.newton_iterations = total_iter
    traj = mesh_to_trajectory(mesh, spec)
    try:
        report.final_cost = trajectory_cost(traj, spec)
    except MissingControls:  # non-finite best-effort iterate
        report.final_cost = np.nan
    return traj, report
