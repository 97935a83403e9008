"""Single shooting on the initial costate.

The unknown is the costate at ``t = 0``; integrating the state/costate ODE
forward gives the terminal costate, which must vanish. Newton's Jacobian
comes from the variational equation ``M' = J(y(t)) M`` integrated alongside
the trajectory. On strongly nonlinear herding scenarios this iteration is
expected to blow up, and the result records that instead of raising by
default.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import ScenarioSpec, Trajectory
from .errors import Diverged, MaxIterationsExceeded, StepSizeUnderflow
from .numkernel import OdePath, integrate_adaptive, newton_damped
from .pmp import augmented_deriv, augmented_jacobian, optimal_control

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e8
_BLOWUP_NORM = 1e12
# a healthy herding integration takes ~150 steps; a trajectory creeping
# toward a near-singularity can otherwise take millions
MAX_STEPS = 20_000


class _BlowUp(Exception):
    pass


@dataclass
class ShootResult:
    initial_costate: np.ndarray
    terminal_costate_norm: float
    converged: bool
    iterations: int
    trajectory: Trajectory | None
    status: str = "converged"   # converged | diverged | max_iterations
    message: str = ""

    def raise_for_status(self):
        if self.status == "diverged":
            raise Diverged(self.message)
        if self.status == "max_iterations":
            raise MaxIterationsExceeded(self.message)


def _sensitivity_rhs(spec, literal):
    D = 2 * spec.state_size
    S = spec.state_size

    def rhs(t, z):
        y = z[:D]
        if not np.all(np.isfinite(z)) or np.max(np.abs(y)) > _BLOWUP_NORM:
            raise _BlowUp(f"trajectory blew up at t={t:.4g}")
        M = z[D:].reshape(D, S)
        dy = augmented_deriv(y, spec, literal)
        dM = augmented_jacobian(y, spec, literal) @ M
        return np.concatenate([dy, dM.ravel()])

    return rhs


def integrate_with_sensitivity(aug0, spec: ScenarioSpec, rtol: float = 1e-10,
                               atol: float = 1e-12, literal_sheep_costate: bool = False,
                               return_path: bool = False, max_steps: int | None = MAX_STEPS):
    """Integrate the augmented system from ``aug0`` over ``[0, tf]``.

    Returns ``(aug_f, sensitivity)`` where ``sensitivity`` is the square
    matrix d(terminal costate)/d(initial costate). With ``return_path`` the
    :class:`~herdopt.numkernel.OdePath` of the augmented state is appended.

    Raises :class:`StepSizeUnderflow` when the trajectory blows up or needs
    more than ``max_steps`` steps.
    """
    aug0 = np.asarray(aug0, dtype=float)
    S = spec.state_size
    D = 2 * S
    selector = np.zeros((D, S))
    selector[S:, :] = np.eye(S)
    z0 = np.concatenate([aug0, selector.ravel()])
    try:
        path = integrate_adaptive(_sensitivity_rhs(spec, literal_sheep_costate), z0,
                                  (0.0, spec.tf), rtol=rtol, atol=atol, max_steps=max_steps)
    except _BlowUp as exc:
        raise StepSizeUnderflow(str(exc)) from exc
    zf = path.final
    sens = zf[D:].reshape(D, S)[S:, :]
    if return_path:
        return zf[:D], sens, OdePath(path.times, path.values[:, :D], path.nfev)
    return zf[:D], sens


def shoot(spec: ScenarioSpec, costate0_guess, max_iter: int = 30, tol: float = 1e-8,
          rtol: float = 1e-10, atol: float = 1e-12, literal_sheep_costate: bool = False,
          strict: bool = False) -> ShootResult:
    """Newton iteration on the initial costate until the terminal costate vanishes.

    Steps are damped as in :func:`~herdopt.numkernel.newton_damped`. An
    iterate norm above 1e8 or a trajectory blow-up counts as divergence.
    With ``strict=True`` failures raise :class:`Diverged` or
    :class:`MaxIterationsExceeded`; otherwise they come back in the result.
    """
    S = spec.state_size
    c0 = np.asarray(costate0_guess, dtype=float)
    if c0.shape != (S,):
        raise ValueError(f"costate guess must have length {S}, got {c0.shape}")
    x0 = spec.initial_state()
    cache = {}

    def evaluate(c):
        key = c.tobytes()
        if key not in cache:
            cache.clear()
            if np.linalg.norm(c) > DIVERGENCE_NORM:
                raise Diverged(f"iterate norm {np.linalg.norm(c):.3e} exceeds {DIVERGENCE_NORM:.0e}")
            try:
                aug_f, sens = integrate_with_sensitivity(np.concatenate([x0, c]), spec, rtol, atol,
                                                         literal_sheep_costate)
                cache[key] = (aug_f[S:], sens)
            except StepSizeUnderflow:
                cache[key] = (np.full(S, np.inf), None)
        return cache[key]

    def residual(c):
        return evaluate(c)[0]

    def jacobian(c):
        sens = evaluate(c)[1]
        if sens is None:
            raise Diverged("trajectory blew up at the current iterate")
        return sens

    status, message = "converged", ""
    try:
        c, ok, iters = newton_damped(residual, jacobian, c0, max_iter=max_iter, tol=tol)
    except Diverged as exc:
        c, ok, iters, status, message = c0, False, max_iter, "diverged", str(exc)
    else:
        if not ok:
            r = residual(c) if np.linalg.norm(c) <= DIVERGENCE_NORM else np.array([np.inf])
            if not np.all(np.isfinite(r)):
                status, message = "diverged", "trajectory blew up"
            else:
                status = "max_iterations"
                message = f"no convergence after {iters} iterations, |F|={np.max(np.abs(r)):.3e}"
    log.info("shoot: %s after %d iterations %s", status, iters, message)

    result = ShootResult(c, np.inf, ok, iters, None, status, message)
    if ok:
        aug_f, _, path = integrate_with_sensitivity(np.concatenate([x0, c]), spec, rtol, atol,
                                                    literal_sheep_costate, return_path=True)
        result.terminal_costate_norm = float(np.max(np.abs(aug_f[S:])))
        result.trajectory = Trajectory(path.times, path.values[:, :S],
                                       controls=optimal_control(path.values, spec),
                                       costates=path.values[:, S:])
    if strict:
        result.raise_for_status()
    return result
