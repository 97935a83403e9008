"""Single shooting from Gaussian costate guesses, next to collocation.

Shooting needs the whole trajectory to stay bounded for every Newton
iterate, so on some herding scenarios the iteration wanders or blows up.
Collocation from the spiral guess is run alongside with five restarts; at
tf = 5 it is not guaranteed either, but each failure is a soft one with a
usable best-effort trajectory.
"""
import time

import numpy as np

from herdopt import solve_with_restarts
from herdopt.bvp import BvpOptions
from herdopt.scenario_io import make_guess, random_circle_init
from herdopt.shooting import shoot


def main(seeds=(0, 3, 4), tf=5.0):
    for seed in seeds:
        spec = random_circle_init(2, 1, seed=seed).scenario(tf=tf)
        guess = np.random.default_rng(seed).standard_normal(spec.state_size)
        start = time.perf_counter()
        r = shoot(spec, guess, max_iter=12)
        shot = time.perf_counter() - start
        start = time.perf_counter()
        _, rep = solve_with_restarts(spec, make_guess(spec, "spiral"), BvpOptions(max_restarts=5))
        print(f"seed {seed}: shooting {r.status} after {r.iterations} iterations ({shot:.1f} s), "
              f"collocation converged={rep.converged} ({time.perf_counter() - start:.1f} s)",
              flush=True)


if __name__ == "__main__":
    main()
