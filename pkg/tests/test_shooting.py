import numpy as np
import pytest
from scipy.linalg import expm

from herdopt.bvp import BvpOptions, solve_with_restarts
from herdopt.checks import fd_jacobian
from herdopt.dynamics import ScenarioSpec
from herdopt.errors import Diverged, MaxIterationsExceeded
from herdopt.numkernel import hermite_interpolate
from herdopt.pmp import augmented_jacobian
from herdopt.scenario_io import make_guess
from herdopt.shooting import ShootResult, integrate_with_sensitivity, shoot


def linear_spec(tf=1.0):
    return ScenarioSpec(m=1, n=0, dog_pos=[[1.5, -1.0]], dog_vel=[[0.3, 0.2]], tf=tf,
                        alpha=0.0, beta=1.0)


def idle_spec(**kw):
    return ScenarioSpec(m=2, n=1, dog_pos=[[2.0, 0.0], [-1.0, 1.5]], sheep_pos=[[0.5, 0.5]],
                        alpha=0.0, beta=0.0, **kw)


def test_zero_costate_stays_zero():
    s = idle_spec()
    aug0 = np.concatenate([s.initial_state(), np.zeros(s.state_size)])
    aug_f, sens = integrate_with_sensitivity(aug0, s)
    np.testing.assert_array_equal(aug_f[s.state_size:], 0.0)
    assert sens.shape == (s.state_size, s.state_size)
    q_d = [2, 3]                                  # first dog's velocity costate
    assert np.all(np.abs(np.diag(sens)[q_d]) > 0)


def test_linear_sensitivity_is_matrix_exponential():
    s = linear_spec()
    S = s.state_size
    a = augmented_jacobian(np.zeros(2 * S), s)     # constant for n = 0
    aug0 = np.concatenate([s.initial_state(), np.zeros(S)])
    _, sens = integrate_with_sensitivity(aug0, s)
    np.testing.assert_allclose(sens, expm(a * s.tf)[S:, S:], atol=1e-6)


def test_sensitivity_matches_fd_short_horizon():
    s = ScenarioSpec(m=2, n=1, dog_pos=[[2.0, 0.0], [-1.0, 1.5]], sheep_pos=[[0.5, 0.5]], tf=0.5)
    S = s.state_size
    c0 = 0.3 * np.random.default_rng(4).standard_normal(S)
    x0 = s.initial_state()

    def terminal(c):
        return integrate_with_sensitivity(np.concatenate([x0, c]), s)[0][S:]

    _, sens = integrate_with_sensitivity(np.concatenate([x0, c0]), s)
    fd = fd_jacobian(terminal, c0, 1e-6)
    assert np.max(np.abs(sens - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_trivial_converges_immediately():
    s = idle_spec()
    r = shoot(s, np.zeros(s.state_size))
    assert r.converged and r.status == "converged" and r.iterations <= 1
    np.testing.assert_array_equal(r.trajectory.controls, 0.0)


def hermite_controls(traj, t):
    # u = q_d / 2 and q_d' = -p_d, so u' = -p_d / 2
    return hermite_interpolate(traj.times, traj.controls, -0.5 * traj.costates[:, 0:2], t)


def test_linear_matches_bvp():
    s = linear_spec()
    r = shoot(s, np.zeros(s.state_size))
    assert r.converged
    traj, rep = solve_with_restarts(s, make_guess(s, "zeros"), BvpOptions(residual_tol=1e-8))
    assert rep.converged
    grid = np.linspace(0, s.tf, 201)
    assert np.max(np.abs(hermite_controls(traj, grid) - hermite_controls(r.trajectory, grid))) <= 1e-4


def test_fixed_point_idempotent():
    s = linear_spec()
    r = shoot(s, np.zeros(s.state_size), tol=1e-9)
    aug_f, _ = integrate_with_sensitivity(np.concatenate([s.initial_state(), r.initial_costate]), s)
    assert np.max(np.abs(aug_f[s.state_size:])) <= 1e-9
    assert r.terminal_costate_norm <= 1e-9


def test_huge_guess_reports_divergence():
    s = idle_spec(tf=1.0).replace(alpha=1.0)
    r = shoot(s, np.full(s.state_size, 1e9))
    assert not r.converged and r.status == "diverged" and r.trajectory is None
    with pytest.raises(Diverged):
        r.raise_for_status()
    with pytest.raises(Diverged):
        shoot(s, np.full(s.state_size, 1e9), strict=True)


def test_iteration_cap_reported():
    s = ScenarioSpec(m=2, n=1, dog_pos=[[2.0, 0.0], [-1.0, 1.5]], sheep_pos=[[0.5, 0.5]], tf=2.0)
    g = np.random.default_rng(0).standard_normal(s.state_size)
    r = shoot(s, g, max_iter=1)
    assert r.status == "max_iterations" and not r.converged
    with pytest.raises(MaxIterationsExceeded):
        r.raise_for_status()


def test_guess_length_checked():
    with pytest.raises(ValueError):
        shoot(linear_spec(), np.zeros(3))


def test_result_type():
    s = idle_spec()
    assert isinstance(shoot(s, np.zeros(s.state_size)), ShootResult)
