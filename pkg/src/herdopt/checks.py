"""Finite-difference verification of the analytic Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ScenarioSpec, dynamics_jacobian, interaction_jacobian, state_deriv
from .pmp import augmented_deriv, augmented_jacobian, augmented_size


def fd_jacobian(f, x, h=1e-5) -> np.ndarray:
    """Central differences, one column per coordinate of ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def relative_error(exact, approx) -> float:
    """Max entry error scaled by the larger of 1 and the largest entry."""
    exact = np.asarray(exact)
    approx = np.asarray(approx)
    return float(np.max(np.abs(exact - approx)) / max(1.0, np.max(np.abs(approx))))


@dataclass
class GradientReport:
    interaction: float
    dynamics: float
    augmented: float
    samples: int

    def worst(self) -> float:
        return max(self.interaction, self.dynamics, self.augmented)

    def passed(self, tol=1e-5) -> bool:
        return self.worst() <= tol


def random_augmented(spec: ScenarioSpec, rng, scale=1.0) -> np.ndarray:
    return scale * rng.standard_normal(augmented_size(spec))


def check_gradients(spec: ScenarioSpec, samples: int = 20, seed=0, h: float = 1e-5) -> GradientReport:
    """Worst relative error of each analytic Jacobian over random states.

    Controls are drawn alongside the state for the dynamics check; the
    augmented Jacobian is checked at random state/costate pairs.
    """
    rng = np.random.default_rng(seed)
    S = spec.state_size
    worst = np.zeros(3)
    for _ in range(samples):
        x = rng.standard_normal(spec.dim)
        exact = interaction_jacobian(x, spec.epsilon, spec.lam)
        approx = fd_jacobian(lambda y: y / (y @ y + spec.epsilon) ** (spec.lam / 2), x, h)
        worst[0] = max(worst[0], relative_error(exact, approx))

        state = rng.standard_normal(S)
        u = rng.standard_normal(spec.control_size)
        approx = fd_jacobian(lambda y: state_deriv(y, u, spec), state, h)
        worst[1] = max(worst[1], relative_error(dynamics_jacobian(state, spec), approx))

        aug = random_augmented(spec, rng)
        approx = fd_jacobian(lambda y: augmented_deriv(y, spec), aug, h)
        worst[2] = max(worst[2], relative_error(augmented_jacobian(aug, spec), approx))
    return GradientReport(*worst.tolist(), samples=samples)
