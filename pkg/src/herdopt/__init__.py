"""Optimal herding controls: m dogs steer n sheep toward the origin.

Three solvers share one model of the dynamics and cost:

* :func:`herdopt.bvp.solve_with_restarts` - collocation solve of the
  state/costate boundary-value problem,
* :func:`herdopt.shooting.shoot` - single shooting on the initial costate,
* :func:`herdopt.lqr.simulate_lqr` - closed-loop LQR re-solved along the path.
"""
from .bvp import BvpOptions, Mesh, SolverReport, solve_with_restarts
from .dynamics import ScenarioSpec, Trajectory, state_deriv, trajectory_cost
from .errors import HerdoptError
from .lqr import CareOptions, LqrWeights, simulate_lqr, solve_care
from .pmp import augmented_deriv, hamiltonian, optimal_control
from .scenario_io import (export_trajectory, make_guess, parse_scenario, random_circle_init,
                          structured_guess, write_scenario)
from .shooting import ShootResult, shoot

__version__ = "0.1.0"

__all__ = [
    "BvpOptions", "CareOptions", "HerdoptError", "LqrWeights", "Mesh", "ScenarioSpec",
    "ShootResult", "SolverReport", "Trajectory", "augmented_deriv", "export_trajectory",
    "hamiltonian", "make_guess", "optimal_control", "parse_scenario", "random_circle_init",
    "shoot", "simulate_lqr", "solve_care", "solve_with_restarts", "state_deriv",
    "structured_guess", "trajectory_cost", "write_scenario",
]
