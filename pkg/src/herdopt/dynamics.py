"""Herding dynamics: scenario definition, packed state layout, vector field,
analytic Jacobians and the running cost.

Packed state layout (length ``2*dim*(m+n)``)::

    [d1, vd1, d2, vd2, ..., dm, vdm, s1, vs1, ..., sn, vsn]

Each entry is a ``dim``-vector. Controls are packed as ``[u1, ..., um]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MissingControls, ValidationError

DOG_COST_MODES = ("origin", "ring")


def _as_block(values, count, dim, name):
    arr = np.zeros((count, dim)) if values is None else np.array(values, dtype=float)
    if count == 0 and arr.size == 0:
        return np.zeros((0, dim))
    if arr.shape != (count, dim):
        raise ValidationError(f"{name}: expected shape ({count}, {dim}), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """One herding problem: ``m`` dogs steering ``n`` sheep to the origin."""

    m: int
    n: int
    dog_pos: np.ndarray = None
    sheep_pos: np.ndarray = None
    dog_vel: np.ndarray = None
    sheep_vel: np.ndarray = None
    dim: int = 2
    tf: float = 2.0
    lam: float = 3.0
    epsilon: float = 0.1
    alpha: float = 1.0
    beta: float = 0.02
    dog_cost_mode: str = "origin"
    seed: int | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"m must be an integer >= 1, got {self.m}")
        if int(self.n) != self.n or self.n < 0:
            raise ValidationError(f"n must be an integer >= 0, got {self.n}")
        if self.dim not in (2, 3):
            raise ValidationError(f"dim must be 2 or 3, got {self.dim}")
        if not self.tf > 0:
            raise ValidationError(f"tf must be positive, got {self.tf}")
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be non-negative")
        if self.dog_cost_mode not in DOG_COST_MODES:
            raise ValidationError(f"dog_cost_mode must be one of {DOG_COST_MODES}")
        for name, count in (("dog_pos", self.m), ("dog_vel", self.m),
                            ("sheep_pos", self.n), ("sheep_vel", self.n)):
            block = _as_block(getattr(self, name), count, self.dim, name)
            if not np.all(np.isfinite(block)):
                raise ValidationError(f"{name} must be finite")
            block.flags.writeable = False
            object.__setattr__(self, name, block)

    def __eq__(self, other):
        if not isinstance(other, ScenarioSpec):
            return NotImplemented
        scalars = ("m", "n", "dim", "tf", "lam", "epsilon", "alpha", "beta",
                   "dog_cost_mode", "seed")
        return (all(getattr(self, k) == getattr(other, k) for k in scalars)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("dog_pos", "dog_vel", "sheep_pos", "sheep_vel")))

    __hash__ = None

    def replace(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    @property
    def state_size(self) -> int:
        return 2 * self.dim * (self.m + self.n)

    @property
    def control_size(self) -> int:
        return self.dim * self.m

    def initial_state(self) -> np.ndarray:
        return pack_state(self.dog_pos, self.dog_vel, self.sheep_pos, self.sheep_vel)


@dataclass
class Trajectory:
    """Time mesh with per-node states, and optionally controls and costates."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    costates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.size:
            raise ValueError("one state per node required")
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float).reshape(self.times.size, -1)
        if self.costates is not None:
            self.costates = np.asarray(self.costates, dtype=float).reshape(self.states.shape)

    def __len__(self):
        return self.times.size

    def sheep_positions(self, spec: ScenarioSpec) -> np.ndarray:
        """Array of shape (nodes, n, dim)."""
        return np.array([unpack_state(x, spec)[2] for x in self.states])

    def dog_positions(self, spec: ScenarioSpec) -> np.ndarray:
        return np.array([unpack_state(x, spec)[0] for x in self.states])


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def pack_state(dog_pos, dog_vel, sheep_pos, sheep_vel) -> np.ndarray:
    dogs = np.stack([np.asarray(dog_pos, float), np.asarray(dog_vel, float)], axis=1)
    sheep = np.stack([np.asarray(sheep_pos, float), np.asarray(sheep_vel, float)], axis=1)
    return np.concatenate([dogs.ravel(), sheep.ravel()])


def unpack_state(x, spec: ScenarioSpec):
    """Split a packed state into ``(dog_pos, dog_vel, sheep_pos, sheep_vel)``.

    The returned arrays are views of shape (count, dim).
    """
    m, n, dim = spec.m, spec.n, spec.dim
    x = np.asarray(x, dtype=float)
    dogs = x[: 2 * dim * m].reshape(m, 2, dim)
    sheep = x[2 * dim * m: 2 * dim * (m + n)].reshape(n, 2, dim)
    return dogs[:, 0], dogs[:, 1], sheep[:, 0], sheep[:, 1]


def dog_pos_index(spec, j):
    start = 2 * spec.dim * j
    return slice(start, start + spec.dim)


def dog_vel_index(spec, j):
    start = 2 * spec.dim * j + spec.dim
    return slice(start, start + spec.dim)


def sheep_pos_index(spec, i):
    start = 2 * spec.dim * (spec.m + i)
    return slice(start, start + spec.dim)


def sheep_vel_index(spec, i):
    start = 2 * spec.dim * (spec.m + i) + spec.dim
    return slice(start, start + spec.dim)


# ---------------------------------------------------------------------------
# interaction
# ---------------------------------------------------------------------------

def sheep_accel(sheep_pos, dog_positions, epsilon, lam) -> np.ndarray:
    """Repulsive acceleration on one sheep from every dog."""
    s = np.asarray(sheep_pos, dtype=float)
    d = np.atleast_2d(np.asarray(dog_positions, dtype=float))
    if d.size == 0:
        return np.zeros_like(s)
    diff = s - d
    w = (np.einsum("ij,ij->i", diff, diff) + epsilon) ** (-lam / 2)
    return w @ diff


def sheep_accels(sheep_pos, dog_pos, epsilon, lam) -> np.ndarray:
    """Batched :func:`sheep_accel` for all sheep, shape (n, dim)."""
    diff = sheep_pos[:, None, :] - dog_pos[None, :, :]
    w = (np.einsum("ijk,ijk->ij", diff, diff) + epsilon) ** (-lam / 2)
    return np.einsum("ij,ijk->ik", w, diff)


def interaction_jacobian(x, epsilon, lam) -> np.ndarray:
    """Derivative of ``x / (|x|^2 + eps)^(lam/2)`` with respect to ``x``.

    Accepts a single displacement or a stack of them (``(..., dim)``) and
    returns matching ``(..., dim, dim)`` matrices. Even in ``x``.
    """
    x = np.asarray(x, dtype=float)
    g = np.sum(x * x, axis=-1) + epsilon
    eye = np.eye(x.shape[-1])
    outer = x[..., :, None] * x[..., None, :]
    return (g ** (-lam / 2))[..., None, None] * (
        eye - lam * (1.0 / g)[..., None, None] * outer)


def pair_jacobians(sheep_pos, dog_pos, epsilon, lam) -> np.ndarray:
    """Interaction Jacobians for every (sheep, dog) pair, shape (n, m, dim, dim)."""
    diff = sheep_pos[:, None, :] - dog_pos[None, :, :]
    return interaction_jacobian(diff, epsilon, lam)


# ---------------------------------------------------------------------------
# vector field and Jacobians
# ---------------------------------------------------------------------------

def state_deriv(state, controls, spec: ScenarioSpec) -> np.ndarray:
    dog_pos, dog_vel, sheep_pos, sheep_vel = unpack_state(state, spec)
    u = np.asarray(controls, dtype=float).reshape(spec.m, spec.dim)
    dogs = np.stack([dog_vel, u], axis=1)
    acc = sheep_accels(sheep_pos, dog_pos, spec.epsilon, spec.lam)
    sheep = np.stack([sheep_vel, acc], axis=1)
    return np.concatenate([dogs.ravel(), sheep.ravel()])


def dynamics_jacobian(state, spec: ScenarioSpec) -> np.ndarray:
    """Analytic Jacobian of :func:`state_deriv` in the state (controls fixed)."""
    m, n, dim = spec.m, spec.n, spec.dim
    size = spec.state_size
    jac = np.zeros((size, size))
    for j in range(m):
        jac[dog_pos_index(spec, j), dog_vel_index(spec, j)] = np.eye(dim)
    if n == 0:
        return jac
    dog_pos, _, sheep_pos, _ = unpack_state(state, spec)
    blocks = pair_jacobians(sheep_pos, dog_pos, spec.epsilon, spec.lam)
    for i in range(n):
        rows = sheep_vel_index(spec, i)
        jac[sheep_pos_index(spec, i), rows] = np.eye(dim)
        jac[rows, sheep_pos_index(spec, i)] = blocks[i].sum(axis=0)
        for j in range(m):
            jac[rows, dog_pos_index(spec, j)] = -blocks[i, j]
    return jac


def control_jacobian(spec: ScenarioSpec) -> np.ndarray:
    b = np.zeros((spec.state_size, spec.control_size))
    for j in range(spec.m):
        b[dog_vel_index(spec, j), j * spec.dim:(j + 1) * spec.dim] = np.eye(spec.dim)
    return b


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------

def dog_position_cost(dog_pos, spec: ScenarioSpec) -> float:
    r2 = np.einsum("ij,ij->i", dog_pos, dog_pos)
    if spec.dog_cost_mode == "ring":
        return 0.5 * spec.beta * float(np.sum((r2 - 1.0) ** 2))
    return spec.beta * float(np.sum(r2))


def dog_cost_gradient(dog_pos, spec: ScenarioSpec) -> np.ndarray:
    """Gradient of :func:`dog_position_cost`, shape (m, dim)."""
    if spec.dog_cost_mode == "ring":
        r2 = np.einsum("ij,ij->i", dog_pos, dog_pos)
        return 2 * spec.beta * (r2 - 1.0)[:, None] * dog_pos
    return 2 * spec.beta * dog_pos


def dog_cost_hessian(dog_pos, spec: ScenarioSpec) -> np.ndarray:
    """Per-dog Hessian blocks of :func:`dog_position_cost`, shape (m, dim, dim)."""
    eye = np.eye(spec.dim)
    if spec.dog_cost_mode == "ring":
        r2 = np.einsum("ij,ij->i", dog_pos, dog_pos)
        outer = dog_pos[:, :, None] * dog_pos[:, None, :]
        return 2 * spec.beta * ((r2 - 1.0)[:, None, None] * eye + 2 * outer)
    return np.broadcast_to(2 * spec.beta * eye, (spec.m, spec.dim, spec.dim)).copy()


def running_cost(state, controls, spec: ScenarioSpec) -> float:
    dog_pos, _, sheep_pos, _ = unpack_state(state, spec)
    u = np.asarray(controls, dtype=float)
    return (spec.alpha * float(np.sum(sheep_pos * sheep_pos))
            + dog_position_cost(dog_pos, spec)
            + float(u @ u))


def trajectory_cost(traj: Trajectory, spec: ScenarioSpec) -> float:
    """Trapezoidal quadrature of the running cost over the trajectory mesh."""
    if traj.controls is None or traj.controls.shape[0] != len(traj):
        raise MissingControls("trajectory has no control block at some node")
    if not np.all(np.isfinite(traj.controls)):
        raise MissingControls("trajectory controls contain non-finite entries")
    vals = np.array([running_cost(x, u, spec) for x, u in zip(traj.states, traj.controls)])
    if len(traj) < 2:
        return 0.0
    dt = np.diff(traj.times)
    return float(np.sum(0.5 * dt * (vals[1:] + vals[:-1])))
