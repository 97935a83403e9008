"""Scenario files, random initial conditions, initial guesses and
trajectory export (CSV and SVG).

Scenario files are YAML mappings::

    m: 2                 # dogs (required)
    n: 1                 # sheep (required)
    dim: 2
    tf: 2.0
    lambda: 3.0
    epsilon: 0.1
    alpha: 1.0
    beta: 0.02
    dog_cost_mode: origin    # or: ring
    seed: 0
    dog_positions: [[2.0, 0.0], [-2.0, 0.5]]
    dog_velocities: [[0.0, 0.0], [0.0, 0.0]]     # optional, default zero
    sheep_positions: [[1.0, 0.0]]
    sheep_velocities: [[0.0, 0.0]]               # optional, default zero
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .bvp import Mesh
from .dynamics import ScenarioSpec, Trajectory, pack_state, state_deriv
from .errors import ParseError, ValidationError
from .numkernel import integrate_adaptive
from .pmp import augmented_size, optimal_control

DEFAULTS = {"dim": 2, "tf": 2.0, "lambda": 3.0, "epsilon": 0.1, "alpha": 1.0, "beta": 0.02,
            "dog_cost_mode": "origin", "seed": None}
DOG_RADIUS_PRESETS = (2.0, 10.0)
SHEEP_RADIUS_PRESETS = (0.5, 1.0)
DEFAULT_SPIRAL_RADIUS = 5.0
SEED_ENV = "HERDOPT_SEED"

_SCALAR_FIELDS = {"m": int, "n": int, "dim": int, "tf": float, "lambda": float,
                  "epsilon": float, "alpha": float, "beta": float, "dog_cost_mode": str,
                  "seed": int}
_BLOCK_FIELDS = {"dog_positions": "dog_pos", "dog_velocities": "dog_vel",
                 "sheep_positions": "sheep_pos", "sheep_velocities": "sheep_vel"}


def resolve_seed(seed):
    """Explicit seed, else ``$HERDOPT_SEED``, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else 0


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _key_lines(text):
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(root, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in root.value}


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ParseError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: expected a key/value mapping at top level")
    lines = _key_lines(text)

    def fail(key, msg):
        raise ParseError(f"{source}:{lines.get(key, '?')}: field '{key}': {msg}")

    kwargs = {}
    for key, value in doc.items():
        if key in _SCALAR_FIELDS:
            kind = _SCALAR_FIELDS[key]
            if value is None and key == "seed":
                kwargs["seed"] = None
                continue
            if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
                fail(key, f"expected an integer, got {value!r}")
            if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
                fail(key, f"expected a number, got {value!r}")
            if kind is str and not isinstance(value, str):
                fail(key, f"expected a string, got {value!r}")
            kwargs["lam" if key == "lambda" else key] = kind(value)
        elif key in _BLOCK_FIELDS:
            try:
                arr = np.array(value if value is not None else [], dtype=float)
            except (TypeError, ValueError):
                fail(key, "expected a list of coordinate lists")
            if arr.size and arr.ndim != 2:
                fail(key, "expected a list of coordinate lists")
            kwargs[_BLOCK_FIELDS[key]] = arr
        else:
            fail(key, "unknown field")
    for key in ("m", "n"):
        if key not in doc:
            raise ParseError(f"{source}: missing required field '{key}'")
    for key, value in DEFAULTS.items():
        kwargs.setdefault("lam" if key == "lambda" else key, value)
    for name in ("dog_pos", "sheep_pos"):
        count = kwargs["m"] if name == "dog_pos" else kwargs["n"]
        if name not in kwargs and count > 0:
            raise ParseError(f"{source}: missing required field "
                             f"'{'dog_positions' if name == 'dog_pos' else 'sheep_positions'}'")
    return ScenarioSpec(**kwargs)


def parse_scenario(path) -> ScenarioSpec:
    """Read a scenario file; omitted fields take the stable defaults
    (lambda=3, epsilon=0.1, alpha=1, beta=0.02, tf=2, dim=2)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc}") from exc
    return parse_scenario_text(text, str(path))


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "m": spec.m, "n": spec.n, "dim": spec.dim, "tf": float(spec.tf),
        "lambda": float(spec.lam), "epsilon": float(spec.epsilon),
        "alpha": float(spec.alpha), "beta": float(spec.beta),
        "dog_cost_mode": spec.dog_cost_mode, "seed": spec.seed,
        "dog_positions": spec.dog_pos.tolist(), "dog_velocities": spec.dog_vel.tolist(),
        "sheep_positions": spec.sheep_pos.tolist(), "sheep_velocities": spec.sheep_vel.tolist(),
    }


def write_scenario(spec: ScenarioSpec, path) -> None:
    text = yaml.safe_dump(scenario_to_dict(spec), sort_keys=False, default_flow_style=None)
    Path(path).write_text(text)


# ---------------------------------------------------------------------------
# initial conditions and guesses
# ---------------------------------------------------------------------------

@dataclass
class InitialConditions:
    dog_pos: np.ndarray
    dog_vel: np.ndarray
    sheep_pos: np.ndarray
    sheep_vel: np.ndarray

    def scenario(self, **params) -> ScenarioSpec:
        m, dim = self.dog_pos.shape
        return ScenarioSpec(m=m, n=self.sheep_pos.shape[0], dim=dim, dog_pos=self.dog_pos,
                            dog_vel=self.dog_vel, sheep_pos=self.sheep_pos,
                            sheep_vel=self.sheep_vel, **params)


def _on_sphere(rng, count, dim, radius):
    v = rng.standard_normal((count, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def random_circle_init(m, n, dim=2, dog_radius=2.0, sheep_radius=1.0,
                       velocity_mode="zero", seed=None) -> InitialConditions:
    """Dogs uniformly on a circle (sphere in 3-D) of ``dog_radius``, sheep on
    one of ``sheep_radius``.

    ``velocity_mode`` is ``"zero"`` or ``("gaussian", sigma)``.
    """
    if dog_radius <= 0 or sheep_radius <= 0:
        raise ValueError("radii must be positive")
    rng = np.random.default_rng(resolve_seed(seed))
    dog_pos = _on_sphere(rng, m, dim, dog_radius)
    sheep_pos = _on_sphere(rng, n, dim, sheep_radius)
    if velocity_mode == "zero":
        dog_vel = np.zeros((m, dim))
        sheep_vel = np.zeros((n, dim))
    else:
        kind, sigma = velocity_mode
        if kind != "gaussian" or sigma <= 0:
            raise ValueError(f"unknown velocity mode {velocity_mode!r}")
        dog_vel = sigma * rng.standard_normal((m, dim))
        sheep_vel = sigma * rng.standard_normal((n, dim))
    return InitialConditions(dog_pos, dog_vel, sheep_pos, sheep_vel)


def nearest_root_angle(theta0: float, m: int) -> float:
    """Angle of the m-th root of unity closest to ``theta0``, unwrapped to
    lie within pi of ``theta0`` so interpolation takes the short way round."""
    roots = 2 * np.pi * np.arange(m) / m
    gaps = np.angle(np.exp(1j * (roots - theta0)))
    k = int(np.argmin(np.round(np.abs(gaps), 12)))  # ties go to the smaller index
    return theta0 + gaps[k]


def _spiral(r0, r_f, theta0, theta_f, t, tf):
    tau = t / tf
    r = r0 * (1 - tau) + r_f * tau
    th = theta0 * (1 - tau) + theta_f * tau
    dr = (r_f - r0) / tf
    dth = (theta_f - theta0) / tf
    c, s = np.cos(th), np.sin(th)
    radial = np.stack([c, s], axis=-1)
    normal = np.stack([-s, c], axis=-1)
    pos = r[:, None] * radial
    vel = dr * radial + (r * dth)[:, None] * normal
    acc = 2 * dr * dth * normal - (r * dth * dth)[:, None] * radial
    return pos, vel, acc


def structured_guess(spec: ScenarioSpec, r_f: float = DEFAULT_SPIRAL_RADIUS,
                     node_count: int = 51) -> Mesh:
    """Spiral-curve initial guess for the augmented BVP.

    Sheep head straight for the origin. Each dog follows a polar curve from
    its start to radius ``r_f`` at the nearest m-th root-of-unity angle; in
    3-D the curve lives in the xy-plane and z goes linearly to zero. The dog
    velocity costate is twice the curve's acceleration, all other costates
    are zero, and the first node is the scenario's exact initial state.
    """
    if node_count < 3:
        raise ValueError("node_count must be >= 3")
    if r_f <= 0:
        raise ValueError("r_f must be positive")
    m, n, dim, tf = spec.m, spec.n, spec.dim, spec.tf
    t = np.linspace(0.0, tf, node_count)
    tau = t / tf
    S = spec.state_size
    values = np.zeros((node_count, 2 * S))

    dog_pos = np.zeros((node_count, m, dim))
    dog_vel = np.zeros((node_count, m, dim))
    dog_acc = np.zeros((node_count, m, dim))
    for j in range(m):
        x0 = spec.dog_pos[j]
        r0 = float(np.hypot(x0[0], x0[1]))
        theta0 = float(np.arctan2(x0[1], x0[0]))
        pos, vel, acc = _spiral(r0, r_f, theta0, nearest_root_angle(theta0, m), t, tf)
        dog_pos[:, j, :2], dog_vel[:, j, :2], dog_acc[:, j, :2] = pos, vel, acc
        if dim == 3:
            dog_pos[:, j, 2] = x0[2] * (1 - tau)
            dog_vel[:, j, 2] = -x0[2] / tf
    sheep_pos = spec.sheep_pos[None] * (1 - tau)[:, None, None]
    sheep_vel = np.broadcast_to(-spec.sheep_pos[None] / tf, (node_count, n, dim))

    for k in range(node_count):
        values[k, :S] = pack_state(dog_pos[k], dog_vel[k], sheep_pos[k], sheep_vel[k])
        costate_dogs = np.stack([np.zeros((m, dim)), 2 * dog_acc[k]], axis=1)
        values[k, S:S + costate_dogs.size] = costate_dogs.ravel()
    values[0, :S] = spec.initial_state()
    return Mesh(t, values)


def constant_guess(spec: ScenarioSpec, node_count: int = 51, costate_sigma: float = 0.0,
                   seed=None) -> Mesh:
    """Initial state held constant; costates zero or N(0, sigma^2)."""
    S = spec.state_size
    t = np.linspace(0.0, spec.tf, node_count)
    values = np.zeros((node_count, augmented_size(spec)))
    values[:, :S] = spec.initial_state()
    if costate_sigma > 0:
        rng = np.random.default_rng(resolve_seed(seed))
        values[:, S:] = costate_sigma * rng.standard_normal((node_count, S))
    return Mesh(t, values)


def make_guess(spec: ScenarioSpec, style: str = "spiral", node_count: int = 51,
               sigma: float = 0.1, r_f: float = DEFAULT_SPIRAL_RADIUS, seed=None) -> Mesh:
    if style == "zeros":
        return constant_guess(spec, node_count)
    if style == "noise":
        return constant_guess(spec, node_count, costate_sigma=sigma, seed=seed)
    if style == "spiral":
        return structured_guess(spec, r_f, node_count)
    raise ValueError(f"unknown guess style {style!r}")


def rollout_guess(spec: ScenarioSpec, guess: Mesh, rtol: float = 1e-8,
                  atol: float = 1e-10) -> Trajectory:
    """Drive the true dynamics with the guess's controls ``u = q_d / 2``.

    A guess is generally not a feasible trajectory; its rollout is, so
    this is what a guess costs. Controls are piecewise linear between the
    guess nodes.
    """
    controls = optimal_control(guess.values, spec)

    def u_at(t):
        return np.array([np.interp(t, guess.nodes, c) for c in controls.T])

    def rhs(t, x):
        return state_deriv(x, u_at(t), spec)

    path = integrate_adaptive(rhs, spec.initial_state(), (guess.nodes[0], guess.nodes[-1]),
                              rtol=rtol, atol=atol, max_step=float(np.min(np.diff(guess.nodes))))
    return Trajectory(path.times, path.values,
                      controls=np.stack([u_at(t) for t in path.times]))


# ---------------------------------------------------------------------------
# trajectory export
# ---------------------------------------------------------------------------

def trajectory_columns(m, n, dim):
    axes = "xyz"[:dim]
    cols = ["t"]
    for j in range(1, m + 1):
        cols += [f"d{j}_{a}" for a in axes] + [f"vd{j}_{a}" for a in axes]
    for i in range(1, n + 1):
        cols += [f"s{i}_{a}" for a in axes] + [f"vs{i}_{a}" for a in axes]
    for j in range(1, m + 1):
        cols += [f"u{j}_{a}" for a in axes]
    return cols


def trajectory_csv(traj: Trajectory, spec: ScenarioSpec) -> str:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    controls = traj.controls if traj.controls is not None else np.full(
        (len(traj), spec.control_size), np.nan)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trajectory_columns(spec.m, spec.n, spec.dim))
    for t, x, u in zip(traj.times, traj.states, controls):
        writer.writerow([f"{v:.17g}" for v in np.concatenate([[t], x, u])])
    return buf.getvalue()


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    n_ctrl = sum(1 for c in header if c.startswith("u"))
    return Trajectory(body[:, 0], body[:, 1:len(header) - n_ctrl],
                      controls=body[:, len(header) - n_ctrl:])


_SVG_SIZE = 600
_SVG_PAD = 30


def trajectory_svg(traj: Trajectory, spec: ScenarioSpec) -> str:
    """Static plot of every agent's path (xy-projection in 3-D)."""
    dogs = traj.dog_positions(spec)[..., :2]
    sheep = traj.sheep_positions(spec)[..., :2]
    pts = np.concatenate([dogs.reshape(-1, 2), sheep.reshape(-1, 2), np.zeros((1, 2))])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    scale = (_SVG_SIZE - 2 * _SVG_PAD) / span

    def xy(p):
        return (_SVG_PAD + (p[0] - lo[0]) * scale,
                _SVG_SIZE - _SVG_PAD - (p[1] - lo[1]) * scale)

    def path(points, cls, ident):
        coords = " L ".join(f"{x:.3f} {y:.3f}" for x, y in map(xy, points))
        return f'  <path id="{ident}" class="{cls}" d="M {coords}"/>'

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" '
             f'height="{_SVG_SIZE}" viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
             "  <style>.dog{fill:none;stroke:#c0392b;stroke-width:2}"
             ".sheep{fill:none;stroke:#2c7fb8;stroke-width:2}"
             ".start{fill:#fff;stroke:#000}.end{fill:#000}"
             ".origin{fill:none;stroke:#555;stroke-dasharray:4 3}</style>"]
    ox, oy = xy(np.zeros(2))
    lines.append(f'  <circle class="origin" cx="{ox:.3f}" cy="{oy:.3f}" r="8"/>')
    agents = [(f"dog{j + 1}", "dog", dogs[:, j]) for j in range(spec.m)]
    agents += [(f"sheep{i + 1}", "sheep", sheep[:, i]) for i in range(spec.n)]
    for ident, cls, p in agents:
        lines.append(path(p, cls, ident))
        for glyph, q in (("start", p[0]), ("end", p[-1])):
            x, y = xy(q)
            lines.append(f'  <circle class="{glyph} {cls}-{glyph}" cx="{x:.3f}" cy="{y:.3f}" r="4"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_trajectory(traj: Trajectory, spec: ScenarioSpec, path, fmt: str | None = None) -> None:
    """Write ``traj`` as CSV or SVG; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower() or "csv"
    if fmt == "csv":
        text = trajectory_csv(traj, spec)
    elif fmt == "svg":
        text = trajectory_svg(traj, spec)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    path.write_text(text)


def cli_main(args=None) -> int:
    """Entry point of the ``herdopt`` command; see :mod:`herdopt.cli`."""
    from .cli import cli_main as _main
    return _main(args)
