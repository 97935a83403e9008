"""Maximum-principle boundary value system for the herding problem.

The augmented vector is ``[state | costate]`` with the costate laid out like
the state: ``[p_d1, q_d1, ..., p_dm, q_dm, p_s1, q_s1, ..., p_sn, q_sn]``,
where ``p`` is conjugate to positions and ``q`` to velocities.

Sign convention: costs enter the Hamiltonian with a minus sign and ``H`` is
maximised, so the optimal control is ``u = q_d / 2``.

All vector-field functions here accept either one augmented vector or a
stack of them with shape ``(N, 4*dim*(m+n))``.
"""
from __future__ import annotations

import numpy as np

from .dynamics import (ScenarioSpec, dog_cost_gradient, dog_cost_hessian,
                       dog_position_cost, interaction_jacobian, sheep_accels,
                       unpack_state)


def augmented_size(spec: ScenarioSpec) -> int:
    return 2 * spec.state_size


def split_augmented(aug, spec: ScenarioSpec):
    aug = np.asarray(aug, dtype=float)
    s = spec.state_size
    return aug[..., :s], aug[..., s:]


def _blocks(v, spec):
    """View (..., S) as dog blocks (..., m, 2, dim) and sheep blocks (..., n, 2, dim)."""
    m, n, dim = spec.m, spec.n, spec.dim
    lead = v.shape[:-1]
    dogs = v[..., : 2 * dim * m].reshape(*lead, m, 2, dim)
    sheep = v[..., 2 * dim * m: 2 * dim * (m + n)].reshape(*lead, n, 2, dim)
    return dogs, sheep


def _third_derivative(x, q, epsilon, lam):
    """d/dx of ``interaction_jacobian(x) @ q``; odd in ``x``. Shape (..., dim, dim)."""
    g = np.sum(x * x, axis=-1) + epsilon
    xq = np.sum(x * q, axis=-1)
    a = g ** (-lam / 2 - 1)
    b = g ** (-lam / 2 - 2)
    eye = np.eye(x.shape[-1])
    qx = q[..., :, None] * x[..., None, :]
    xqT = x[..., :, None] * q[..., None, :]
    xx = x[..., :, None] * x[..., None, :]
    return (-lam * a[..., None, None] * (qx + xqT + xq[..., None, None] * eye)
            + lam * (lam + 2) * (b * xq)[..., None, None] * xx)


def optimal_control(aug, spec: ScenarioSpec) -> np.ndarray:
    _, costate = split_augmented(aug, spec)
    dogs, _ = _blocks(costate, spec)
    q_d = dogs[..., 1, :]
    return 0.5 * q_d.reshape(*q_d.shape[:-2], spec.control_size)


def hamiltonian(aug, controls, spec: ScenarioSpec) -> float:
    state, costate = split_augmented(aug, spec)
    dog_pos, dog_vel, sheep_pos, sheep_vel = unpack_state(state, spec)
    cd, cs = _blocks(costate, spec)
    u = np.asarray(controls, dtype=float).reshape(spec.m, spec.dim)
    acc = sheep_accels(sheep_pos, dog_pos, spec.epsilon, spec.lam)
    h = np.sum(cd[:, 0] * dog_vel) + np.sum(cd[:, 1] * u)
    h += np.sum(cs[:, 0] * sheep_vel) + np.sum(cs[:, 1] * acc)
    h -= spec.alpha * np.sum(sheep_pos * sheep_pos)
    h -= dog_position_cost(dog_pos, spec)
    h -= np.sum(u * u)
    return float(h)


def augmented_deriv(aug, spec: ScenarioSpec, literal_sheep_costate: bool = False) -> np.ndarray:
    """Right-hand side of the state/costate system with ``u = q_d / 2``.

    ``literal_sheep_costate=True`` replaces the sheep velocity-costate
    equation ``q_s' = -p_s`` with ``q_s' = -q_s`` for comparison runs.
    """
    aug = np.asarray(aug, dtype=float)
    single = aug.ndim == 1
    y = aug[None] if single else aug
    state, costate = split_augmented(y, spec)
    xd, xs = _blocks(state, spec)
    cd, cs = _blocks(costate, spec)
    d, vd = xd[:, :, 0], xd[:, :, 1]
    s, vs = xs[:, :, 0], xs[:, :, 1]
    pd, qd = cd[:, :, 0], cd[:, :, 1]
    ps, qs = cs[:, :, 0], cs[:, :, 1]
    big_n = y.shape[0]

    diff = s[:, :, None, :] - d[:, None, :, :]  # (N, n, m, dim)
    g = np.einsum("...k,...k->...", diff, diff) + spec.epsilon
    acc = np.einsum("Nij,Nijk->Nik", g ** (-spec.lam / 2), diff)
    jac = interaction_jacobian(diff, spec.epsilon, spec.lam)  # (N, n, m, dim, dim)
    jq = np.einsum("Nijab,Nib->Nija", jac, qs)  # J(s_i - d_j) q_s^(i)

    dog_grad = np.stack([dog_cost_gradient(dd, spec) for dd in d]) if big_n else d

    ddog = np.stack([vd, 0.5 * qd], axis=2)
    dsheep = np.stack([vs, acc], axis=2)
    dpd = jq.sum(axis=1) + dog_grad
    dqd = -pd
    dps = -jq.sum(axis=2) + 2 * spec.alpha * s
    dqs = -qs if literal_sheep_costate else -ps
    dcd = np.stack([dpd, dqd], axis=2)
    dcs = np.stack([dps, dqs], axis=2)
    out = np.concatenate([ddog.reshape(big_n, -1), dsheep.reshape(big_n, -1),
                          dcd.reshape(big_n, -1), dcs.reshape(big_n, -1)], axis=1)
    return out[0] if single else out


def augmented_jacobian(aug, spec: ScenarioSpec, literal_sheep_costate: bool = False) -> np.ndarray:
    """Analytic Jacobian of :func:`augmented_deriv`, shape (..., D, D)."""
    aug = np.asarray(aug, dtype=float)
    single = aug.ndim == 1
    y = aug[None] if single else aug
    m, n, dim = spec.m, spec.n, spec.dim
    S = spec.state_size
    big_n = y.shape[0]
    eye = np.eye(dim)
    jac = np.zeros((big_n, 2 * S, 2 * S))

    def dp(j):  # dog position offset within a state-sized block
        return 2 * dim * j

    def sp(i):
        return 2 * dim * (m + i)

    for j in range(m):
        a = dp(j)
        jac[:, a:a + dim, a + dim:a + 2 * dim] = eye                 # d' = vd
        jac[:, a + dim:a + 2 * dim, S + a + dim:S + a + 2 * dim] = 0.5 * eye  # vd' = qd/2
        jac[:, S + a + dim:S + a + 2 * dim, S + a:S + a + dim] = -eye          # qd' = -pd
    for i in range(n):
        b = sp(i)
        jac[:, b:b + dim, b + dim:b + 2 * dim] = eye                 # s' = vs
        if literal_sheep_costate:
            jac[:, S + b + dim:S + b + 2 * dim, S + b + dim:S + b + 2 * dim] = -eye
        else:
            jac[:, S + b + dim:S + b + 2 * dim, S + b:S + b + dim] = -eye

    state, costate = split_augmented(y, spec)
    xd, xs = _blocks(state, spec)
    cd, cs = _blocks(costate, spec)
    d = xd[:, :, 0]
    s = xs[:, :, 0]
    qs = cs[:, :, 1]

    for j in range(m):
        a = dp(j)
        hess = np.stack([dog_cost_hessian(dd, spec)[j] for dd in d]) if big_n else 0.0
        jac[:, S + a:S + a + dim, a:a + dim] += hess
    if n == 0:
        return jac[0] if single else jac

    diff = s[:, :, None, :] - d[:, None, :, :]  # (N, n, m, dim)
    pair = interaction_jacobian(diff, spec.epsilon, spec.lam)
    third = _third_derivative(diff, qs[:, :, None, :], spec.epsilon, spec.lam)
    for i in range(n):
        b = sp(i)
        vrow = slice(b + dim, b + 2 * dim)            # sheep accel rows
        psrow = slice(S + b, S + b + dim)             # p_s' rows
        qscol = slice(S + b + dim, S + b + 2 * dim)   # q_s columns
        jsum = pair[:, i].sum(axis=1)
        jac[:, vrow, b:b + dim] = jsum
        jac[:, psrow, b:b + dim] = -third[:, i].sum(axis=1) + 2 * spec.alpha * eye
        jac[:, psrow, qscol] = -jsum
        for j in range(m):
            a = dp(j)
            pdrow = slice(S + a, S + a + dim)
            jac[:, vrow, a:a + dim] = -pair[:, i, j]
            jac[:, psrow, a:a + dim] = third[:, i, j]
            # p_d' = sum_i J(s_i - d_j) q_i: derivative in d_j is -T, in s_i is +T
            jac[:, pdrow, a:a + dim] -= third[:, i, j]
            jac[:, pdrow, b:b + dim] = third[:, i, j]
            jac[:, pdrow, qscol] = pair[:, i, j]
    return jac[0] if single else jac


def boundary_residual(aug_0, aug_f, spec: ScenarioSpec) -> np.ndarray:
    """Initial-state mismatch followed by the terminal costate (zero when satisfied)."""
    x0, _ = split_augmented(aug_0, spec)
    _, cf = split_augmented(aug_f, spec)
    return np.concatenate([x0 - spec.initial_state(), cf])


def boundary_jacobians(spec: ScenarioSpec):
    """Constant Jacobians of :func:`boundary_residual` with respect to ``aug_0`` and ``aug_f``."""
    S = spec.state_size
    ja = np.zeros((2 * S, 2 * S))
    jb = np.zeros((2 * S, 2 * S))
    ja[:S, :S] = np.eye(S)
    jb[S:, S:] = np.eye(S)
    return ja, jb
