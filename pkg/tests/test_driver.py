"""Configuration handling, the time loop, file outputs and the CLI."""

import json
import os

import numpy as np
import pytest

from greytrt.driver import (
    PRESETS,
    build_problem,
    cells_to_dofs,
    dofs_to_cells,
    load_config,
    main,
    run_config,
    run_problem,
    validate_config,
    write_fields,
)
from greytrt.errors import ConfigurationError
from greytrt.mesh import build_grid
from greytrt.physics import PhysicsConstants


def smoke_config(method="sn", n_steps=4, **extra):
    """Optically moderate single-material box with a warm central disc."""
    cfg = {
        "method": method,
        "rank": 6,
        "grid": {"nx": 8, "ny": 8, "extent": [0.0, 0.0, 1.0, 1.0]},
        "quadrature": {"n_polar": 2, "n_azimuthal": 4},
        "time": {"dt": 0.05, "n_steps": n_steps},
        "materials": [{"name": "foam", "sigma_a": 5.0, "c_v": 0.1, "rho": 1.0}],
        "background": {"material": 0, "temperature": 0.1},
        "regions": [
            {"shape": "disc", "center": [0.5, 0.5], "radius": 0.22,
             "material": 0, "temperature": 0.5}
        ],
    }
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------------------
# configuration validation


def test_preset_only_config_fills_defaults():
    cfg = validate_config({"preset": "lattice"})
    assert cfg["method"] == "sn"
    assert cfg["grid"]["nx"] == 35 and cfg["grid"]["ny"] == 35
    assert cfg["quadrature"] == {"n_polar": 3, "n_azimuthal": 6}
    assert cfg["solver"]["si_tol"] == 1e-8
    assert cfg["solver"]["use_dsa"] is True
    assert cfg["solver"]["threads"] == 0
    assert cfg["output"]["every"] == 50
    assert cfg["initial_radiation"] == "planck"
    assert cfg["physics"]["t_floor"] > 0


def test_preset_overrides_merge_key_by_key():
    cfg = validate_config({"preset": "lattice", "grid": {"nx": 14},
                           "solver": {"si_tol": 1e-10}})
    assert cfg["grid"]["nx"] == 14
    assert cfg["grid"]["ny"] == 35
    assert cfg["grid"]["extent"] == [0.0, 0.0, 7.0, 7.0]
    assert cfg["solver"]["si_tol"] == 1e-10
    assert cfg["solver"]["si_max_iters"] == 500


def test_unknown_preset_lists_available_names():
    with pytest.raises(ConfigurationError, match="lattice"):
        validate_config({"preset": "checkerboard"})


def test_unknown_keys_are_rejected_with_their_path():
    with pytest.raises(ConfigurationError, match="'bogus'"):
        validate_config(smoke_config(bogus=1))
    cfg = smoke_config()
    cfg["grid"]["nz"] = 2
    with pytest.raises(ConfigurationError, match=r"grid\.'nz'"):
        validate_config(cfg)
    cfg = smoke_config()
    cfg["materials"][0]["opacity"] = 1.0
    with pytest.raises(ConfigurationError, match=r"materials\[0\]\.'opacity'"):
        validate_config(cfg)
    cfg = smoke_config(solver={"tolerance": 1e-8})
    with pytest.raises(ConfigurationError, match=r"solver\.'tolerance'"):
        validate_config(cfg)


def test_low_rank_rank_cap_names_both_values():
    cfg = smoke_config(method="dlr-sn", rank=9)
    with pytest.raises(ConfigurationError) as err:
        validate_config(cfg)
    assert "9" in str(err.value) and "8" in str(err.value)
    validate_config(smoke_config(method="dlr-sn", rank=8))
    with pytest.raises(ConfigurationError):
        validate_config(smoke_config(method="dlr-pn", rank=0))


def test_time_section_needs_exactly_one_duration():
    cfg = smoke_config()
    cfg["time"] = {"dt": 0.1, "t_final": 1.0, "n_steps": 10}
    with pytest.raises(ConfigurationError, match="exactly one"):
        validate_config(cfg)
    cfg["time"] = {"dt": 0.1}
    with pytest.raises(ConfigurationError, match="exactly one"):
        validate_config(cfg)


def test_duration_must_be_a_whole_number_of_steps():
    cfg = smoke_config()
    cfg["time"] = {"dt": 0.1, "t_final": 0.25}
    with pytest.raises(ConfigurationError, match="t_final"):
        build_problem(cfg)
    cfg["time"] = {"dt": 0.1, "t_final": 0.3}
    assert build_problem(cfg).n_steps == 3


def test_initial_radiation_must_be_planck_or_zero():
    assert validate_config(smoke_config(initial_radiation="zero"))
    with pytest.raises(ConfigurationError, match="initial_radiation"):
        validate_config(smoke_config(initial_radiation="equilibrium"))


def test_method_name_is_validated():
    with pytest.raises(ConfigurationError, match="method"):
        validate_config(smoke_config(method="pn"))


def test_region_shape_fields_are_cross_checked():
    cfg = smoke_config()
    cfg["regions"] = [{"shape": "disc", "center": [0.5, 0.5], "radius": 0.1,
                       "material": 0, "bounds": [0, 0, 1, 1]}]
    with pytest.raises(ConfigurationError, match="bounds"):
        validate_config(cfg)
    cfg["regions"] = [{"shape": "rect", "bounds": [0, 0, 1, 1], "material": 0,
                       "radius": 0.1}]
    with pytest.raises(ConfigurationError, match="center/radius"):
        validate_config(cfg)
    cfg["regions"] = [{"shape": "triangle", "material": 0}]
    with pytest.raises(ConfigurationError, match="shape"):
        validate_config(cfg)


def test_nonpositive_dt_and_negative_steps_are_rejected():
    cfg = smoke_config()
    cfg["time"] = {"dt": 0.0, "n_steps": 1}
    with pytest.raises(ConfigurationError, match="dt"):
        build_problem(cfg)
    cfg["time"] = {"dt": 0.1, "n_steps": -1}
    with pytest.raises(ConfigurationError, match="negative"):
        build_problem(cfg)


def test_load_config_rejects_broken_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{no quotes")
    with pytest.raises(ConfigurationError, match="JSON"):
        load_config(str(path))


# ---------------------------------------------------------------------------
# presets


def test_lattice_preset_materials_and_layout():
    problem = build_problem({"preset": "lattice"})
    mats = problem.config["materials"]
    assert (mats[0]["sigma_a"], mats[0]["c_v"], mats[0]["rho"]) == (4.0, 0.02412, 0.2)
    assert (mats[1]["sigma_a"], mats[1]["c_v"], mats[1]["rho"]) == (1e4, 0.05427, 8.0)
    assert (mats[2]["sigma_a"], mats[2]["c_v"], mats[2]["rho"]) == (1e2, 0.05427, 2.0)

    cx, cy = problem.grid.cell_centers.T
    center = (np.abs(cx - 3.5) < 0.5) & (np.abs(cy - 3.5) < 0.5)
    assert np.all(problem.sigma_a[center] == 1e4)
    assert np.all(problem.T[center] == 0.3)
    assert center.sum() == 25
    corner = (np.abs(cx - 1.5) < 0.5) & (np.abs(cy - 1.5) < 0.5)
    assert np.all(problem.sigma_a[corner] == 1e2)
    assert np.all(problem.T[corner] == 1e-4)
    assert problem.sigma_a[np.argmin(np.hypot(cx - 0.5, cy - 0.5))] == 4.0
    assert problem.dt == 0.1 and problem.n_steps == 250


def test_hohlraum_preset_materials_and_layout():
    problem = build_problem({"preset": "hohlraum"})
    cx, cy = problem.grid.cell_centers.T

    hot = np.argmin(np.hypot(cx - 0.0125, cy - 0.1625))
    assert problem.sigma_a[hot] == 1e4 and problem.T[hot] == 0.3
    cold_wall = np.argmin(np.hypot(cx - 0.0125, cy - 0.0125))
    assert problem.sigma_a[cold_wall] == 1e4 and problem.T[cold_wall] == 1e-4
    capsule = np.argmin(np.hypot(cx - 0.5, cy - 0.5))
    assert problem.sigma_a[capsule] == 1e2
    cavity = np.argmin(np.hypot(cx - 0.5, cy - 0.8))
    assert problem.sigma_a[cavity] == 4.0
    assert problem.rho_cv[cold_wall] == pytest.approx(8.0 * 0.05427)


def test_presets_validate_as_full_configs():
    for name, make in PRESETS.items():
        cfg = validate_config(make())
        assert cfg["method"] in ("sn", "dlr-sn", "dlr-pn"), name


# ---------------------------------------------------------------------------
# field transfer helpers


def test_cell_dof_transfer_round_trips():
    rng = np.random.default_rng(3)
    dg = build_grid(4, 3, flavor="discontinuous")
    vals = rng.standard_normal(dg.n_cells)
    assert np.array_equal(dofs_to_cells(dg, cells_to_dofs(dg, vals)), vals)
    cont = build_grid(4, 3, flavor="continuous")
    const = np.full(cont.n_cells, 0.7)
    assert np.allclose(dofs_to_cells(cont, cells_to_dofs(cont, const)), 0.7)


# ---------------------------------------------------------------------------
# outputs


def test_zero_steps_writes_initial_fields_only(tmp_path):
    out = tmp_path / "run"
    cfg = smoke_config(n_steps=0, output={"directory": str(out)})
    result = run_config(cfg)
    assert result.diagnostics == []
    assert sorted(os.listdir(out)) == ["diagnostics.csv", "fields_00000.csv"]
    diag = (out / "diagnostics.csv").read_text().splitlines()
    assert diag == ["step,time,iterations,condition,discarded,"
                    "e_material,e_radiation,outflow,balance_residual"]

    lines = (out / "fields_00000.csv").read_text().splitlines()
    assert lines[0] == "x,y,T,phi"
    assert len(lines) == 1 + 64
    x, y, temp, phi = (float(v) for v in lines[1].split(","))
    constants = PhysicsConstants()
    assert (x, y) == (1 / 16, 1 / 16)
    assert temp == 0.1
    # isotropic start at the local emission level: phi = a_r c T^4
    assert phi == pytest.approx(constants.a_r * constants.c * 0.1**4, rel=1e-12)


def test_zero_initial_radiation_starts_dark(tmp_path):
    out = tmp_path / "dark"
    cfg = smoke_config(n_steps=0, initial_radiation="zero",
                       output={"directory": str(out)})
    run_config(cfg)
    rows = (out / "fields_00000.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[3]) == 0.0 for r in rows)


def test_low_rank_initial_state_reproduces_the_equilibrium_flux(tmp_path):
    out = tmp_path / "lr"
    cfg = smoke_config(method="dlr-sn", n_steps=0, output={"directory": str(out)})
    run_config(cfg)
    constants = PhysicsConstants()
    for row in (out / "fields_00000.csv").read_text().splitlines()[1:]:
        _, _, temp, phi = (float(v) for v in row.split(","))
        assert phi == pytest.approx(constants.a_r * constants.c * temp**4, rel=1e-9)


def test_field_rows_round_trip_doubles_exactly(tmp_path):
    grid = build_grid(1, 1, extent=(0.0, 0.0, 1.0, 1.0), flavor="discontinuous")
    temp = np.array([np.pi / 7])
    phi = np.array([1.0 / 3.0])
    path = tmp_path / "fields.csv"
    write_fields(str(path), grid, temp, phi)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,T,phi"
    assert len(lines) == 2
    x, y, t_back, phi_back = (float(v) for v in lines[1].split(","))
    assert (x, y) == (0.5, 0.5)
    assert t_back == temp[0] and phi_back == phi[0]


def test_vtk_snapshot_has_one_point_per_cell(tmp_path):
    out = tmp_path / "vtk"
    cfg = smoke_config(n_steps=1)
    cfg["grid"] = {"nx": 4, "ny": 3, "extent": [0.0, 0.0, 1.0, 1.0]}
    cfg["output"] = {"directory": str(out), "every": 1, "vtk": True}
    run_config(cfg)
    text = (out / "vtk_00001.vtk").read_text().splitlines()
    assert "DIMENSIONS 4 3 1" in text
    assert "POINT_DATA 12" in text
    for name in ("T", "phi"):
        start = text.index(f"SCALARS {name} double 1") + 2
        values = []
        while start < len(text) and not text[start].startswith("SCALARS"):
            values.append(float(text[start]))
            start += 1
        assert len(values) == 12
        assert all(np.isfinite(values))


def test_identical_configs_produce_identical_bytes(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = smoke_config(n_steps=2, output={"directory": str(out), "every": 1})
        run_config(cfg)
        outs.append(out)
    for fname in ("diagnostics.csv", "fields_00001.csv", "fields_00002.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes(), fname


# ---------------------------------------------------------------------------
# the time loop


def test_lattice_short_run_balances_energy():
    result = run_config({"preset": "lattice"}, n_steps=10)
    rows = np.array([r[1:] for r in result.diagnostics], dtype=float)
    times, residuals = rows[:, 0], rows[:, 7]
    assert np.all(np.isfinite(rows))
    assert np.all(np.diff(times) > 0)
    assert np.abs(residuals).max() <= 1e-6
    assert result.diagnostics[-1][0] == 10


def test_even_parity_balance_closes_on_a_thick_box():
    # at full angular rank the step is an exact discrete solve, so the
    # residual isolates the leakage bookkeeping (Marshak wall moment)
    cfg = {
        "method": "dlr-pn",
        "rank": 18,
        "grid": {"nx": 8, "ny": 8, "extent": [0.0, 0.0, 1.0, 1.0]},
        "quadrature": {"n_polar": 3, "n_azimuthal": 6},
        "time": {"dt": 0.1, "n_steps": 6},
        "materials": [{"sigma_a": 1e4, "c_v": 0.05, "rho": 2.0}],
        "background": {"material": 0, "temperature": 0.5},
    }
    rows = run_config(cfg).diagnostics
    assert max(abs(r[8]) for r in rows) <= 1e-9


def test_even_parity_balance_survives_the_temperature_floor():
    # the lattice's opaque block makes the nodal flux undershoot next door and
    # the floor clamps whole cells; the budget must count that injection as a
    # source or the residual jumps five orders of magnitude
    rows = run_config({"preset": "lattice"}, method="dlr-pn", n_steps=2).diagnostics
    for r in rows:
        assert abs(r[8]) <= 1e-10 + r[4]


def test_three_methods_agree_on_a_mild_problem():
    phis = {}
    for method in ("sn", "dlr-sn", "dlr-pn"):
        phis[method] = run_config(smoke_config(), method=method).phi
    names = list(phis)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            num = np.linalg.norm(phis[a] - phis[b])
            den = max(np.linalg.norm(phis[a]), np.linalg.norm(phis[b]))
            assert num / den <= 0.1, (a, b, num / den)


def test_thread_count_does_not_change_results(monkeypatch):
    base = run_config(smoke_config(n_steps=2))
    threaded = run_config(smoke_config(n_steps=2, solver={"threads": 2}))
    assert np.array_equal(base.phi, threaded.phi)
    assert base.diagnostics == threaded.diagnostics

    monkeypatch.setenv("TRT_THREADS", "2")
    via_env = run_config(smoke_config(n_steps=2))
    assert np.array_equal(base.phi, via_env.phi)
    assert base.diagnostics == via_env.diagnostics


def test_solver_failure_flushes_diagnostics(tmp_path):
    out = tmp_path / "fail"
    cfg = smoke_config(n_steps=2, solver={"use_dsa": False, "si_max_iters": 3})
    cfg["grid"] = {"nx": 4, "ny": 4, "extent": [0.0, 0.0, 1.0, 1.0]}
    cfg["time"] = {"dt": 10.0, "n_steps": 2}
    cfg["materials"] = [{"sigma_a": 100.0, "c_v": 1e-4, "rho": 1.0}]
    cfg["background"] = {"material": 0, "temperature": 0.5}
    cfg["regions"] = []
    cfg["output"] = {"directory": str(out)}
    from greytrt.errors import SolverError

    with pytest.raises(SolverError, match="step 1 of 2"):
        run_config(cfg)
    assert (out / "diagnostics.csv").exists()


# ---------------------------------------------------------------------------
# command line


def test_cli_lists_presets(capsys):
    assert main(["presets"]) == 0
    listing = capsys.readouterr().out
    assert "lattice" in listing and "hohlraum" in listing


def test_cli_writes_loadable_preset_files(tmp_path, capsys):
    target = tmp_path / "presets"
    assert main(["presets", "--write", str(target)]) == 0
    capsys.readouterr()
    for name in ("lattice", "hohlraum"):
        with open(target / f"{name}.json") as fh:
            validate_config(json.load(fh))


def test_cli_run_completes_and_writes_outputs(tmp_path, capsys):
    cfg_path = tmp_path / "smoke.json"
    cfg_path.write_text(json.dumps(smoke_config(n_steps=1)))
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg_path), "--out", str(out), "--steps", "1"])
    captured = capsys.readouterr()
    assert code == 0
    assert "done:" in captured.out
    assert (out / "fields_00001.csv").exists()
    assert (out / "diagnostics.csv").exists()


def test_cli_flags_override_method_and_rank(tmp_path, capsys):
    cfg_path = tmp_path / "smoke.json"
    cfg_path.write_text(json.dumps(smoke_config(n_steps=1)))
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg_path), "--method", "dlr-sn",
                 "--rank", "4", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    diag = (out / "diagnostics.csv").read_text().splitlines()
    assert len(diag) == 2  # header plus the single step
    condition = float(diag[1].split(",")[3])
    assert np.isfinite(condition) and condition >= 1.0


def test_cli_reports_config_errors(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["run", "--config", str(missing)]) == 2
    assert "error:" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(smoke_config(bogus=True)))
    assert main(["run", "--config", str(bad)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_reports_solver_failures(tmp_path, capsys):
    cfg = smoke_config(n_steps=2, solver={"use_dsa": False, "si_max_iters": 3})
    cfg["time"] = {"dt": 10.0, "n_steps": 2}
    cfg["materials"] = [{"sigma_a": 100.0, "c_v": 1e-4, "rho": 1.0}]
    cfg["background"] = {"material": 0, "temperature": 0.5}
    cfg["regions"] = []
    cfg_path = tmp_path / "stall.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(cfg_path)]) == 1
    err = capsys.readouterr().err
    assert "step 1" in err
