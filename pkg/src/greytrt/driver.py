"""Problem setup, time stepping and the command-line entry point.

Configurations are plain JSON.  Unknown keys are rejected so typos fail loudly
instead of silently running defaults.  Two ready-made problems ship with the
package (``trt presets``): a lattice of opaque blocks in foam with a hot
center, and a hohlraum-like enclosure with heated wall segments and a central
capsule.

Every run writes cellwise field snapshots (``fields_<step>.csv`` with columns
x,y,T,phi) plus a ``diagnostics.csv`` with per-step energy accounting.  All
numbers are printed with repr-exact precision so identical runs produce
identical bytes.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .angular import build_quadrature, orthonormalize
from .dlr_pn import step_even_parity, wall_outflow
from .dlr_sn import step_collocation
from .errors import ConfigurationError, SolverError
from .lowrank import DlrState, mass_inner, spatial_monomials
from .mesh import (
    CONTINUOUS,
    DISCONTINUOUS,
    Disc,
    Rect,
    assign_materials,
    build_grid,
    dof_coordinates,
    q1_reference,
)
from .physics import (
    DEFAULT_T_FLOOR,
    FOUR_PI,
    Material,
    PhysicsConstants,
    linearize,
    planck,
    update_temperature,
)
from .transport_sn import (
    assemble_operators,
    boundary_outflow,
    source_iteration,
)

METHODS = ("sn", "dlr-sn", "dlr-pn")


# ---------------------------------------------------------------------------
# configuration


_SOLVER_DEFAULTS = {
    "si_tol": 1e-8,
    "si_max_iters": 500,
    "use_dsa": True,
    "dsa_penalty": "simplified",
    "cg_tol": 1e-10,
    "check_state": True,
    "threads": 0,
}

_OUTPUT_DEFAULTS = {"directory": None, "every": 50, "vtk": False}


def _reject_unknown(section, allowed, path):
    for key in section:
        if key not in allowed:
            raise ConfigurationError(f"unknown config key {path}{key!r}")


def _require(section, keys, path):
    for key in keys:
        if key not in section:
            raise ConfigurationError(f"missing config key {path}{key!r}")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _check_rank(method, rank, n_angles):
    if method == "sn":
        return
    if rank < 1:
        raise ConfigurationError(f"method {method!r} needs rank >= 1, got {rank}")
    if rank > n_angles:
        raise ConfigurationError(
            f"rank {rank} exceeds the {n_angles} quadrature angles "
            f"(method {method!r} keeps at most one basis column per angle)"
        )


def validate_config(cfg):
    """Check structure and key names; returns the config with defaults filled.

    A ``preset`` key pulls in one of the built-in problem definitions as the
    base; every other key in the file overrides the preset value (nested
    sections merge key by key).
    """
    if not isinstance(cfg, dict):
        raise ConfigurationError("config root must be an object")
    cfg = copy.deepcopy(cfg)
    preset = cfg.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg = _merge(PRESETS[preset](), cfg)
    _reject_unknown(
        cfg,
        {"method", "rank", "grid", "quadrature", "time", "physics", "materials",
         "background", "regions", "solver", "output", "initial_radiation"},
        "",
    )
    _require(cfg, ("method", "grid", "time", "materials", "background"), "")

    if cfg["method"] not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}, got {cfg['method']!r}")

    _reject_unknown(cfg["grid"], {"nx", "ny", "extent"}, "grid.")
    _require(cfg["grid"], ("nx", "ny", "extent"), "grid.")

    quad = cfg.setdefault("quadrature", {"n_polar": 3, "n_azimuthal": 6})
    _reject_unknown(quad, {"n_polar", "n_azimuthal"}, "quadrature.")
    _require(quad, ("n_polar", "n_azimuthal"), "quadrature.")

    _reject_unknown(cfg["time"], {"dt", "t_final", "n_steps"}, "time.")
    _require(cfg["time"], ("dt",), "time.")
    if ("t_final" in cfg["time"]) == ("n_steps" in cfg["time"]):
        raise ConfigurationError("time needs exactly one of 't_final' or 'n_steps'")

    physics = cfg.setdefault("physics", {})
    _reject_unknown(physics, {"c", "a_r", "t_floor"}, "physics.")
    physics.setdefault("c", PhysicsConstants.c)
    physics.setdefault("a_r", PhysicsConstants.a_r)
    physics.setdefault("t_floor", DEFAULT_T_FLOOR)

    if not cfg["materials"]:
        raise ConfigurationError("materials list must not be empty")
    for i, mat in enumerate(cfg["materials"]):
        _reject_unknown(mat, {"name", "sigma_a", "c_v", "rho"}, f"materials[{i}].")
        _require(mat, ("sigma_a", "c_v", "rho"), f"materials[{i}].")

    _reject_unknown(cfg["background"], {"material", "temperature"}, "background.")
    _require(cfg["background"], ("material", "temperature"), "background.")

    for i, reg in enumerate(cfg.setdefault("regions", [])):
        path = f"regions[{i}]."
        _reject_unknown(reg, {"shape", "bounds", "center", "radius", "material", "temperature"}, path)
        _require(reg, ("shape", "material"), path)
        if reg["shape"] == "rect":
            _require(reg, ("bounds",), path)
            if "center" in reg or "radius" in reg:
                raise ConfigurationError(f"{path}center/radius only apply to discs")
        elif reg["shape"] == "disc":
            _require(reg, ("center", "radius"), path)
            if "bounds" in reg:
                raise ConfigurationError(f"{path}bounds only applies to rects")
        else:
            raise ConfigurationError(f"{path}shape must be 'rect' or 'disc'")

    solver = cfg.setdefault("solver", {})
    _reject_unknown(solver, set(_SOLVER_DEFAULTS), "solver.")
    for key, val in _SOLVER_DEFAULTS.items():
        solver.setdefault(key, val)

    output = cfg.setdefault("output", {})
    _reject_unknown(output, set(_OUTPUT_DEFAULTS), "output.")
    for key, val in _OUTPUT_DEFAULTS.items():
        output.setdefault(key, val)

    init = cfg.setdefault("initial_radiation", "planck")
    if init not in ("planck", "zero"):
        raise ConfigurationError(
            f"initial_radiation must be 'planck' or 'zero', got {init!r}"
        )

    cfg.setdefault("rank", 6)
    _check_rank(cfg["method"], int(cfg["rank"]),
                int(quad["n_polar"]) * int(quad["n_azimuthal"]))
    return cfg


def load_config(path):
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"config {path} is not valid JSON: {err}") from err
    return validate_config(cfg)


def _region_shape(reg):
    if reg["shape"] == "rect":
        x0, y0, x1, y1 = (float(v) for v in reg["bounds"])
        return Rect(x0, y0, x1, y1, int(reg["material"]))
    cx, cy = (float(v) for v in reg["center"])
    return Disc(cx, cy, float(reg["radius"]), int(reg["material"]))


# ---------------------------------------------------------------------------
# problem assembly


@dataclass(eq=False)
class Problem:
    config: dict
    method: str
    grid: object
    quad: object
    constants: PhysicsConstants
    sigma_a: np.ndarray  # per cell
    rho_cv: np.ndarray
    T: np.ndarray  # initial temperatures per cell
    dt: float
    n_steps: int
    rank: int
    t_floor: float
    solver: dict
    output: dict
    initial_radiation: str = "planck"


def build_problem(cfg, method=None, rank=None, out_dir=None, n_steps=None):
    cfg = validate_config(cfg)
    method = method or cfg["method"]
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}, got {method!r}")

    g = cfg["grid"]
    flavor = CONTINUOUS if method == "dlr-pn" else DISCONTINUOUS
    grid = build_grid(int(g["nx"]), int(g["ny"]), tuple(float(v) for v in g["extent"]), flavor)

    q = cfg["quadrature"]
    quad = build_quadrature(int(q["n_polar"]), int(q["n_azimuthal"]))

    ph = cfg["physics"]
    constants = PhysicsConstants(c=float(ph["c"]), a_r=float(ph["a_r"]))

    materials = [
        Material(sigma_a=float(m["sigma_a"]), c_v=float(m["c_v"]), rho=float(m["rho"]))
        for m in cfg["materials"]
    ]
    shapes = [_region_shape(reg) for reg in cfg["regions"]]
    mat_map = assign_materials(grid, shapes, int(cfg["background"]["material"]), len(materials))
    sigma_a = np.array([m.sigma_a for m in materials])[mat_map.ids]
    rho_cv = np.array([m.rho_cv for m in materials])[mat_map.ids]

    temps = np.full(grid.n_cells, float(cfg["background"]["temperature"]))
    cx, cy = grid.cell_centers[:, 0], grid.cell_centers[:, 1]
    for reg, shape in zip(cfg["regions"], shapes):
        if "temperature" in reg:
            temps[shape.contains(cx, cy)] = float(reg["temperature"])

    t = cfg["time"]
    dt = float(t["dt"])
    if dt <= 0:
        raise ConfigurationError("time.dt must be positive")
    if n_steps is not None:
        steps = int(n_steps)
    elif "n_steps" in t:
        steps = int(t["n_steps"])
    else:
        t_final = float(t["t_final"])
        steps = int(round(t_final / dt))
        if abs(steps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
            raise ConfigurationError(
                f"t_final {t_final} is not an integer number of steps of dt {dt}"
            )
    if steps < 0:
        raise ConfigurationError("the number of time steps cannot be negative")

    output = dict(cfg["output"])
    if out_dir is not None:
        output["directory"] = out_dir

    rank_val = int(rank if rank is not None else cfg["rank"])
    _check_rank(method, rank_val, quad.n_angles)

    return Problem(
        config=cfg,
        method=method,
        grid=grid,
        quad=quad,
        constants=constants,
        sigma_a=sigma_a,
        rho_cv=rho_cv,
        T=temps,
        dt=dt,
        n_steps=steps,
        rank=rank_val,
        t_floor=float(ph["t_floor"]),
        solver=dict(cfg["solver"]),
        output=output,
        initial_radiation=str(cfg["initial_radiation"]),
    )


# ---------------------------------------------------------------------------
# initial states


def assemble_mass(grid):
    """Sparse mass matrix for either dof layout."""
    import scipy.sparse as sp

    block = grid.dx * grid.dy * q1_reference()["mass"]
    nc = grid.n_cells
    rows = np.broadcast_to(grid.cell_dofs[:, :, None], (nc, 4, 4)).ravel()
    cols = np.broadcast_to(grid.cell_dofs[:, None, :], (nc, 4, 4)).ravel()
    data = np.broadcast_to(block, (nc, 4, 4)).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(grid.n_dofs, grid.n_dofs))


def cells_to_dofs(grid, values):
    """Cellwise field sampled on the dofs (nodal values average adjacent cells)."""
    if grid.flavor == DISCONTINUOUS:
        return np.repeat(values, 4)
    acc = np.zeros(grid.n_dofs)
    cnt = np.zeros(grid.n_dofs)
    np.add.at(acc, grid.cell_dofs, np.broadcast_to(values[:, None], grid.cell_dofs.shape))
    np.add.at(cnt, grid.cell_dofs, 1.0)
    return acc / cnt


def dofs_to_cells(grid, values):
    """Cell means of a dof field (exact for bilinear fields)."""
    return np.asarray(values)[grid.cell_dofs].mean(axis=1)


def integrate_dofs(grid, values):
    return float(dofs_to_cells(grid, values).sum() * grid.cell_area)


def initial_low_rank(grid, quad, b_dofs, rank, mass):
    """Equilibrium intensity B(T0) as a padded rank-``rank`` factorization.

    The physical content is rank one (isotropic); remaining columns are
    orthonormalized monomials carrying zero coefficient, present so the
    steppers have room to grow structure from the first step on.
    """
    from .angular import gram_schmidt

    cols = np.zeros((grid.n_dofs, rank))
    cols[:, 0] = b_dofs
    completion = spatial_monomials(dof_coordinates(grid), grid.extent, rank + 8)
    x, rx, _ = gram_schmidt(cols, mass_inner(mass), completion)
    w_basis, _, _ = orthonormalize(np.zeros((quad.n_angles, rank - 1)), quad, pin_constant=True)
    s = np.zeros((rank, rank))
    s[0, 0] = rx[0, 0] * np.sqrt(FOUR_PI)
    return DlrState(X=x, S=s, W=w_basis)


# ---------------------------------------------------------------------------
# outputs


def _fmt(x):
    return format(float(x), ".17g")


def write_fields(path, grid, temperature, phi):
    lines = ["x,y,T,phi"]
    for c in range(grid.n_cells):
        lines.append(
            ",".join(
                (
                    _fmt(grid.cell_centers[c, 0]),
                    _fmt(grid.cell_centers[c, 1]),
                    _fmt(temperature[c]),
                    _fmt(phi[c]),
                )
            )
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_vtk(path, grid, temperature, phi):
    """Legacy structured-points file for quick visualization.

    Cell-center values are stored as one point per cell, so the point grid is
    nx-by-ny with its origin at the first cell center.
    """
    head = [
        "# vtk DataFile Version 3.0",
        "grey thermal radiative transfer fields",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx} {grid.ny} 1",
        f"ORIGIN {_fmt(grid.x0 + 0.5 * grid.dx)} {_fmt(grid.y0 + 0.5 * grid.dy)} 0",
        f"SPACING {_fmt(grid.dx)} {_fmt(grid.dy)} 1",
        f"POINT_DATA {grid.n_cells}",
    ]
    body = []
    for name, field in (("T", temperature), ("phi", phi)):
        body.append(f"SCALARS {name} double 1")
        body.append("LOOKUP_TABLE default")
        body.extend(_fmt(v) for v in field)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(head + body) + "\n")


DIAGNOSTIC_COLUMNS = (
    "step,time,iterations,condition,discarded,"
    "e_material,e_radiation,outflow,balance_residual"
)


def write_diagnostics(path, rows):
    lines = [DIAGNOSTIC_COLUMNS]
    for row in rows:
        lines.append(
            ",".join([str(row[0]), _fmt(row[1]), str(row[2])] + [_fmt(v) for v in row[3:]])
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# the run loop


@dataclass(eq=False)
class RunResult:
    problem: Problem
    temperature: np.ndarray  # final per-cell temperatures
    phi: np.ndarray  # final per-cell scalar flux
    psi: np.ndarray | None  # final intensity (full-rank method only)
    state: DlrState | None  # final factored state (low-rank methods)
    diagnostics: list  # rows in DIAGNOSTIC_COLUMNS order


def run_problem(problem, progress=None):
    grid, quad = problem.grid, problem.quad
    solver = problem.solver
    threads = int(solver.get("threads", 0)) or int(os.environ.get("TRT_THREADS", "0") or 0)

    temperature = problem.T.copy()
    b0, _ = planck(cells_to_dofs(grid, temperature), problem.constants)
    if problem.initial_radiation == "zero":
        b0 = np.zeros_like(b0)
    mass = assemble_mass(grid)

    psi = None
    state = None
    if problem.method == "sn":
        psi = np.tile(b0[:, None], (1, quad.n_angles))
        phi_dofs = psi @ quad.weights
    else:
        state = initial_low_rank(grid, quad, b0, problem.rank, mass)
        phi_dofs = state.scalar_flux()

    out_dir = problem.output["directory"]
    every = int(problem.output["every"])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_fields(
            os.path.join(out_dir, "fields_00000.csv"),
            grid, temperature, dofs_to_cells(grid, phi_dofs),
        )

    e_mat = float(np.sum(problem.rho_cv * temperature) * grid.cell_area)
    e_rad = integrate_dofs(grid, phi_dofs) / problem.constants.c
    rows = []

    for k in range(1, problem.n_steps + 1):
        lin = linearize(temperature, problem.sigma_a, problem.rho_cv, problem.dt,
                        problem.constants)

        cond = 0.0
        discarded = 0.0
        try:
            if problem.method == "sn":
                ops = assemble_operators(grid, lin, dsa_penalty=solver["dsa_penalty"])
                res = source_iteration(
                    ops, quad.omegas, quad.weights,
                    psi_time=psi,
                    use_dsa=solver["use_dsa"],
                    tol=solver["si_tol"],
                    max_iters=solver["si_max_iters"],
                    phi_start=phi_dofs,
                    threads=threads,
                )
                psi, phi_dofs, iters = res.psi, res.phi, res.iterations
                psi_full = psi
            elif problem.method == "dlr-sn":
                state, info = step_collocation(
                    grid, lin, quad, state,
                    si_tol=solver["si_tol"],
                    si_max_iters=solver["si_max_iters"],
                    use_dsa=solver["use_dsa"],
                    dsa_penalty=solver["dsa_penalty"],
                    threads=threads,
                    check_state=solver["check_state"],
                )
                phi_dofs, iters = info.phi, info.iterations
                cond = info.interpolation_condition
                psi_full = state.reconstruct()
            else:
                state, info = step_even_parity(
                    grid, lin, quad, state,
                    cg_tol=solver["cg_tol"],
                    check_state=solver["check_state"],
                )
                phi_dofs, iters = info.phi, sum(info.iterations)
                discarded = info.discarded
                psi_full = state.reconstruct()
        except Exception as err:
            if out_dir is not None:
                write_diagnostics(os.path.join(out_dir, "diagnostics.csv"), rows)
            raise SolverError(f"step {k} of {problem.n_steps} failed: {err}") from err

        phi_cells = dofs_to_cells(grid, phi_dofs)
        raw_t = update_temperature(phi_cells, lin, -np.inf)
        temperature = np.maximum(raw_t, problem.t_floor)
        # the positivity floor injects energy wherever it clamps (non-monotone
        # methods can undershoot on near-vacuum backgrounds); the budget counts
        # that as an explicit source so the residual still measures closure of
        # the linearized system
        floor_source = float(np.sum(problem.rho_cv * (temperature - raw_t)) * grid.cell_area)

        # each discretization loses energy through its own boundary term:
        # upwind flux for the sweep-based methods, Marshak wall moment for
        # the nodal even-parity method
        if problem.method == "dlr-pn":
            outflow = wall_outflow(grid, psi_full, quad)
        else:
            outflow = boundary_outflow(grid, psi_full, quad.omegas, quad.weights)
        e_mat_new = float(np.sum(problem.rho_cv * temperature) * grid.cell_area)
        e_rad_new = integrate_dofs(grid, psi_full @ quad.weights) / problem.constants.c
        total = e_mat_new + e_rad_new
        residual = (total - e_mat - e_rad + problem.dt * outflow - floor_source) \
            / max(abs(total), 1e-300)
        e_mat, e_rad = e_mat_new, e_rad_new

        rows.append((k, k * problem.dt, iters, cond, discarded,
                     e_mat, e_rad, outflow, residual))
        if progress is not None:
            progress(rows[-1])

        if out_dir is not None and (k % every == 0 or k == problem.n_steps):
            write_fields(os.path.join(out_dir, f"fields_{k:05d}.csv"),
                         grid, temperature, phi_cells)
            if problem.output["vtk"]:
                write_vtk(os.path.join(out_dir, f"vtk_{k:05d}.vtk"),
                          grid, temperature, phi_cells)

    if out_dir is not None:
        write_diagnostics(os.path.join(out_dir, "diagnostics.csv"), rows)

    return RunResult(
        problem=problem,
        temperature=temperature,
        phi=dofs_to_cells(grid, phi_dofs),
        psi=psi,
        state=state,
        diagnostics=rows,
    )


def run_config(cfg, **overrides):
    return run_problem(build_problem(cfg, **overrides))


# ---------------------------------------------------------------------------
# presets


def preset_lattice():
    """7x7 block lattice in foam: hot center, opaque satellites, background 1e-4."""
    iron = 1
    diamond = 2
    cold = [(2, 2), (2, 4), (4, 2), (4, 4), (1, 3), (3, 1), (3, 5), (5, 3)]
    corners = [(1, 1), (1, 5), (5, 1), (5, 5)]
    regions = [
        {"shape": "rect", "bounds": [3.0, 3.0, 4.0, 4.0], "material": iron,
         "temperature": 0.3}
    ]
    regions += [
        {"shape": "rect", "bounds": [float(i), float(j), float(i + 1), float(j + 1)],
         "material": iron}
        for i, j in cold
    ]
    regions += [
        {"shape": "rect", "bounds": [float(i), float(j), float(i + 1), float(j + 1)],
         "material": diamond}
        for i, j in corners
    ]
    return {
        "method": "sn",
        "rank": 6,
        "grid": {"nx": 35, "ny": 35, "extent": [0.0, 0.0, 7.0, 7.0]},
        "quadrature": {"n_polar": 3, "n_azimuthal": 6},
        "time": {"dt": 0.1, "t_final": 25.0},
        "materials": [
            {"name": "foam", "sigma_a": 4.0, "c_v": 0.02412, "rho": 0.2},
            {"name": "iron", "sigma_a": 1.0e4, "c_v": 0.05427, "rho": 8.0},
            {"name": "diamond", "sigma_a": 1.0e2, "c_v": 0.05427, "rho": 2.0},
        ],
        "background": {"material": 0, "temperature": 1.0e-4},
        "regions": regions,
        "output": {"directory": "out-lattice", "every": 50, "vtk": False},
    }


def preset_hohlraum():
    """Enclosure with heated wall segments, foam fill and a central capsule."""
    iron = 1
    diamond = 2
    walls = [
        [0.0, 0.0, 1.0, 0.1],
        [0.0, 0.9, 1.0, 1.0],
        [0.0, 0.0, 0.1, 1.0],
        [0.9, 0.0, 1.0, 1.0],
    ]
    spans = [(0.15, 0.25), (0.35, 0.45), (0.55, 0.65), (0.75, 0.85)]
    hot = [[0.0, a, 0.1, b] for a, b in spans] + [[0.9, a, 1.0, b] for a, b in spans]
    regions = [
        {"shape": "rect", "bounds": w, "material": iron} for w in walls
    ] + [
        {"shape": "rect", "bounds": h, "material": iron, "temperature": 0.3} for h in hot
    ] + [
        {"shape": "disc", "center": [0.5, 0.5], "radius": 0.15, "material": diamond}
    ]
    return {
        "method": "sn",
        "rank": 6,
        "grid": {"nx": 40, "ny": 40, "extent": [0.0, 0.0, 1.0, 1.0]},
        "quadrature": {"n_polar": 3, "n_azimuthal": 6},
        "time": {"dt": 0.02, "t_final": 3.0},
        "materials": [
            {"name": "foam", "sigma_a": 4.0, "c_v": 0.02412, "rho": 0.2},
            {"name": "iron", "sigma_a": 1.0e4, "c_v": 0.05427, "rho": 8.0},
            {"name": "diamond", "sigma_a": 1.0e2, "c_v": 0.05427, "rho": 2.0},
        ],
        "background": {"material": 0, "temperature": 1.0e-4},
        "regions": regions,
        "output": {"directory": "out-hohlraum", "every": 25, "vtk": False},
    }


PRESETS = {"lattice": preset_lattice, "hohlraum": preset_hohlraum}


# ---------------------------------------------------------------------------
# command line


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="trt",
        description="Grey thermal radiative transfer on a 2D grid: "
        "discrete-ordinates sweeps or two low-rank steppers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a problem from a JSON config")
    runp.add_argument("--config", required=True, help="path to the JSON configuration")
    runp.add_argument("--method", choices=METHODS, help="override the configured solver")
    runp.add_argument("--rank", type=int, help="override the low-rank rank")
    runp.add_argument("--out", help="override the output directory")
    runp.add_argument("--steps", type=int, help="override the number of time steps")

    prep = sub.add_parser("presets", help="list or write the built-in configurations")
    prep.add_argument("--write", metavar="DIR", help="write <name>.json files into DIR")

    args = parser.parse_args(argv)

    if args.command == "presets":
        if args.write:
            os.makedirs(args.write, exist_ok=True)
            for name, make in PRESETS.items():
                path = os.path.join(args.write, f"{name}.json")
                with open(path, "w", newline="\n") as fh:
                    json.dump(make(), fh, indent=2)
                    fh.write("\n")
                print(path)
        else:
            for name, make in PRESETS.items():
                cfg = make()
                g = cfg["grid"]
                print(f"{name}: {g['nx']}x{g['ny']} cells, dt={cfg['time']['dt']}, "
                      f"t_final={cfg['time']['t_final']}")
        return 0

    try:
        cfg = load_config(args.config)
        problem = build_problem(
            cfg, method=args.method, rank=args.rank, out_dir=args.out, n_steps=args.steps
        )
    except (OSError, ConfigurationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    def progress(row):
        step, time, iters, _cond, _disc, e_m, e_r, _outflow, resid = row
        print(
            f"step {step:5d}/{problem.n_steps}  t={time:.6g}  iters={iters:3d}  "
            f"e_mat={e_m:.6e}  e_rad={e_r:.6e}  balance={resid:+.3e}",
            flush=True,
        )

    try:
        result = run_problem(problem, progress=progress)
    except SolverError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if result.diagnostics:
        final = result.diagnostics[-1]
        print(f"done: {problem.method} for {problem.n_steps} steps, "
              f"final material energy {final[5]:.6e}, radiation {final[6]:.6e}")
    else:
        print("done: wrote initial fields only (0 steps)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
