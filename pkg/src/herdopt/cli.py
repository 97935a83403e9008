"""Command-line interface: ``herdopt <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 solver non-convergence
(whatever output could be produced is still written).
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .bvp import BvpOptions, solve_with_restarts
from .checks import check_gradients
from .dynamics import Trajectory, trajectory_cost
from .errors import ControllerStalled, HerdoptError, StepSizeUnderflow
from .lqr import LINEARIZATIONS, LqrWeights, simulate_lqr
from .pmp import optimal_control
from .scenario_io import (DEFAULT_SPIRAL_RADIUS, export_trajectory, make_guess,
                          parse_scenario, random_circle_init, read_trajectory_csv,
                          resolve_seed, scenario_to_dict, trajectory_csv, write_scenario)
from .shooting import integrate_with_sensitivity, shoot

log = logging.getLogger("herdopt")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2


class _UsageError(Exception):
    pass


def _err(msg):
    print(f"herdopt: {msg}", file=sys.stderr)


def _write_outputs(traj, spec, out, svg):
    if out is None:
        sys.stdout.write(trajectory_csv(traj, spec))
    else:
        export_trajectory(traj, spec, out)
    if svg is not None:
        export_trajectory(traj, spec, svg, "svg")


def _output_for(args, scenario):
    """Per-scenario output path; batches write ``<dir>/<stem>.<ext>``."""
    if len(args.scenario) == 1:
        return args.out, args.svg
    stem = Path(scenario).stem
    out = Path(args.out) / f"{stem}.csv"
    svg = Path(args.svg) / f"{stem}.svg" if args.svg else None
    return out, svg


# ---------------------------------------------------------------------------
# per-scenario jobs (module level so they pickle for --jobs)
# ---------------------------------------------------------------------------

def _job_solve_bvp(args, scenario):
    spec = parse_scenario(scenario)
    seed = resolve_seed(args.seed if args.seed is not None else spec.seed)
    guess = make_guess(spec, args.guess, args.nodes, args.sigma, args.r_f, seed)
    opts = BvpOptions(residual_tol=args.tol, max_nodes=args.max_nodes,
                      max_restarts=args.max_restarts)
    traj, report = solve_with_restarts(spec, guess, opts, args.literal_sheep_costate)
    _write_outputs(traj, spec, *_output_for(args, scenario))
    _err(f"{scenario}: converged={report.converged} restarts={report.restarts_used} "
         f"residual={report.max_rms_residual:.3e} cost={report.final_cost:.6g} {report.message}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _job_shoot(args, scenario):
    spec = parse_scenario(scenario)
    seed = resolve_seed(args.seed if args.seed is not None else spec.seed)
    rng = np.random.default_rng(seed)
    guess = args.sigma * rng.standard_normal(spec.state_size)
    result = shoot(spec, guess, max_iter=args.max_iter, tol=args.tol,
                   literal_sheep_costate=args.literal_sheep_costate)
    traj = result.trajectory
    if traj is None:
        # best effort: roll out the last iterate if it stays finite
        try:
            aug0 = np.concatenate([spec.initial_state(), result.initial_costate])
            _, _, path = integrate_with_sensitivity(aug0, spec, return_path=True)
            S = spec.state_size
            traj = Trajectory(path.times, path.values[:, :S],
                              controls=optimal_control(path.values, spec),
                              costates=path.values[:, S:])
        except StepSizeUnderflow:
            traj = None
    out, svg = _output_for(args, scenario)
    if traj is not None:
        _write_outputs(traj, spec, out, svg)
    _err(f"{scenario}: {result.status} after {result.iterations} iterations {result.message}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _load_weights(path):
    if path is None:
        return LqrWeights()
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise _UsageError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise _UsageError(f"{path}: weights file must be a mapping")
    fields = set(LqrWeights.__dataclass_fields__)
    unknown = set(data) - fields
    if unknown:
        raise _UsageError(f"{path}: unknown weight(s) {sorted(unknown)}")
    try:
        return LqrWeights(**{k: float(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise _UsageError(f"{path}: {exc}") from exc


def _job_simulate_lqr(args, scenario):
    spec = parse_scenario(scenario)
    weights = _load_weights(args.weights)
    try:
        traj, report = simulate_lqr(spec, weights, linearization=args.linearization)
    except ControllerStalled as exc:
        _err(f"{scenario}: {exc}")
        return EXIT_NOT_CONVERGED
    _write_outputs(traj, spec, *_output_for(args, scenario))
    d = report.diagnostics
    _err(f"{scenario}: cost={report.final_cost:.6g} steps={d['steps']} "
         f"care_failures={d['care_failures']} min_contact={d['min_contact_distance']:.4g}")
    return EXIT_OK


_JOBS = {"solve-bvp": _job_solve_bvp, "shoot": _job_shoot, "simulate-lqr": _job_simulate_lqr}


def _run_job(name, args, scenario):
    try:
        return _JOBS[name](args, scenario)
    except (HerdoptError, OSError, _UsageError) as exc:
        _err(f"{scenario}: {exc}")
        return EXIT_USAGE


def _run_batch(args):
    scenarios = args.scenario
    if len(scenarios) > 1:
        if args.out is None:
            raise _UsageError("several scenarios need --out DIR")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        if args.svg:
            Path(args.svg).mkdir(parents=True, exist_ok=True)
    if args.jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            codes = list(pool.map(_run_job, [args.command] * len(scenarios),
                                  [args] * len(scenarios), scenarios))
    else:
        codes = [_run_job(args.command, args, s) for s in scenarios]
    return max(codes)


# ---------------------------------------------------------------------------
# single-shot commands
# ---------------------------------------------------------------------------

def _cmd_eval_cost(args):
    spec = parse_scenario(args.scenario)
    traj = read_trajectory_csv(args.trajectory)
    if traj.states.shape[1] != spec.state_size or traj.controls.shape[1] != spec.control_size:
        raise _UsageError("trajectory columns do not match the scenario dimensions")
    print(f"{trajectory_cost(traj, spec):.17g}")
    return EXIT_OK


def _cmd_check_gradients(args):
    spec = parse_scenario(args.scenario)
    seed = resolve_seed(args.seed if args.seed is not None else spec.seed)
    rep = check_gradients(spec, args.samples, seed)
    for name in ("interaction", "dynamics", "augmented"):
        print(f"{name:12s} {getattr(rep, name):.3e}")
    ok = rep.passed(args.tol)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _cmd_init_random(args):
    if args.m < 1 or args.n < 0:
        raise _UsageError("need m >= 1 and n >= 0")
    if args.dog_radius <= 0 or args.sheep_radius <= 0:
        raise _UsageError("radii must be positive")
    seed = resolve_seed(args.seed)
    velocity = ("gaussian", args.velocity_sigma) if args.velocity_sigma else "zero"
    ic = random_circle_init(args.m, args.n, args.dim, args.dog_radius, args.sheep_radius,
                            velocity, seed)
    spec = ic.scenario(tf=args.tf, lam=args.lam, epsilon=args.epsilon, alpha=args.alpha,
                       beta=args.beta, dog_cost_mode=args.dog_cost_mode, seed=seed)
    if args.out is None:
        sys.stdout.write(yaml.safe_dump(scenario_to_dict(spec), sort_keys=False,
                                        default_flow_style=None))
    else:
        write_scenario(spec, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="herdopt", description="Optimal herding controls.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def batch(sp):
        sp.add_argument("scenario", nargs="+", help="scenario YAML file(s)")
        sp.add_argument("--out", help="trajectory file (.csv or .svg); a directory for batches; "
                                      "stdout when omitted")
        sp.add_argument("--svg", help="also write an SVG plot here")
        sp.add_argument("--jobs", type=_positive_int, default=1,
                        help="solve several scenarios concurrently")

    sp = sub.add_parser("solve-bvp", help="collocation solve of the optimality system")
    batch(sp)
    sp.add_argument("--guess", choices=("zeros", "noise", "spiral"), default="spiral")
    sp.add_argument("--sigma", type=float, default=0.1, help="costate noise for --guess noise")
    sp.add_argument("--r-f", type=float, default=DEFAULT_SPIRAL_RADIUS,
                    help="final spiral radius for --guess spiral")
    sp.add_argument("--nodes", type=int, default=51)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--max-nodes", type=int, default=5000)
    sp.add_argument("--max-restarts", type=int, default=30)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--literal-sheep-costate", action="store_true")

    sp = sub.add_parser("shoot", help="single shooting from a random costate guess")
    batch(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--max-iter", type=int, default=30)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--literal-sheep-costate", action="store_true")

    sp = sub.add_parser("simulate-lqr", help="closed-loop LQR simulation")
    batch(sp)
    sp.add_argument("--weights", help="YAML mapping of LQR weights")
    sp.add_argument("--linearization", choices=LINEARIZATIONS, default="sdc")

    sp = sub.add_parser("eval-cost", help="cost of a trajectory CSV")
    sp.add_argument("trajectory")
    sp.add_argument("scenario")

    sp = sub.add_parser("check-gradients", help="finite-difference Jacobian checks")
    sp.add_argument("scenario")
    sp.add_argument("--samples", type=_positive_int, default=20)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tol", type=float, default=1e-5)

    sp = sub.add_parser("init-random", help="write a random circle scenario")
    sp.add_argument("m", type=int)
    sp.add_argument("n", type=int)
    sp.add_argument("--dim", type=int, choices=(2, 3), default=2)
    sp.add_argument("--dog-radius", type=float, default=2.0)
    sp.add_argument("--sheep-radius", type=float, default=1.0)
    sp.add_argument("--velocity-sigma", type=float, default=0.0)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tf", type=float, default=2.0)
    sp.add_argument("--lambda", dest="lam", type=float, default=3.0)
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--beta", type=float, default=0.02)
    sp.add_argument("--dog-cost-mode", choices=("origin", "ring"), default="origin")
    sp.add_argument("--out")
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in _JOBS:
            return _run_batch(args)
        if args.command == "eval-cost":
            return _cmd_eval_cost(args)
        if args.command == "check-gradients":
            return _cmd_check_gradients(args)
        return _cmd_init_random(args)
    except (HerdoptError, OSError, ValueError, _UsageError) as exc:
        _err(str(exc))
        return EXIT_USAGE


def main():
    sys.exit(cli_main())
