"""Driver and command line: config validation, modes, reports, exit codes.

Solver-heavy modes run on reduced grids chosen so every gate still holds
with margin; the point here is the wiring (validation order, report
envelope, determinism, exit-code mapping), not the numerics, which have
their own suites.
"""

import json

import numpy as np
import pytest

from muskat.cli import main
from muskat.driver import ConfigError, load_config, run
from muskat.reporting import config_hash


def write_config(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def load_report(out):
    with open(out / "report.json", encoding="utf-8") as fh:
        return json.load(fh)


def check_map(report):
    return {c["name"]: c for c in report["checks"]}


# ---------------------------------------------------------------------------
# config validation


def test_empty_config_names_first_missing_key(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "")
    with pytest.raises(ConfigError, match="run.mode"):
        load_config(cfg)


def test_missing_keys_reported_in_order(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[run]\nmode = holder-check\n")
    with pytest.raises(ConfigError, match="run.out"):
        load_config(cfg)
    cfg = write_config(
        tmp_path / "d.ini", "[run]\nmode = holder-check\nout = x\n")
    with pytest.raises(ConfigError, match="run.seed"):
        load_config(cfg)


def test_unknown_key_rejected(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = holder-check\nout = x\nseed = 1\n"
        "[grid]\nvertcal = 16\n")
    with pytest.raises(ConfigError, match="grid.vertcal"):
        load_config(cfg)


def test_unknown_mode_rejected(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini", "[run]\nmode = solve-all\nout = x\nseed = 1\n")
    with pytest.raises(ConfigError, match="solve-all"):
        load_config(cfg)


def test_out_of_range_value_names_key(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = linear-solve\nout = x\nseed = 1\n"
        "[grid]\nvertical = 3\n")
    with pytest.raises(ConfigError, match="grid.vertical"):
        load_config(cfg)


def test_non_numeric_value_names_key(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = linear-solve\nout = x\nseed = 1\n"
        "[model]\neps = fast\n")
    with pytest.raises(ConfigError, match="model.eps"):
        load_config(cfg)


def test_wall_preset_validation(tmp_path):
    bad = ("pump:0.6,0.04,1.5", "wiggle:1", "pulse:0.6")
    for text in bad:
        cfg = write_config(
            tmp_path / "c.ini",
            "[run]\nmode = nonlinear-solve\nout = x\nseed = 1\n"
            f"[model]\nwall_plus = {text}\n")
        with pytest.raises(ConfigError, match="wall_plus"):
            load_config(cfg)


def test_cli_overrides_win_over_file(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = holder-check\nout = old\nseed = 1\n")
    conf = load_config(cfg, mode="linear-solve", out=str(tmp_path / "new"))
    assert conf.mode == "linear-solve"
    assert conf.out.endswith("new")
    resolved = dict(conf.resolved)
    assert resolved["run.mode"] == "linear-solve"


def test_cli_override_satisfies_required_key(tmp_path):
    # the mode may arrive purely from the command line
    cfg = write_config(tmp_path / "c.ini", "[run]\nout = x\nseed = 1\n")
    conf = load_config(cfg, mode="holder-check")
    assert conf.mode == "holder-check"


def test_oracle_compare_rejects_laterally_varying_wall(tmp_path):
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = oracle-compare\nout = x\nseed = 1\n"
        "[model]\nwall_plus = pump:0.6,0.04,1\n")
    with pytest.raises(ConfigError, match="laterally constant"):
        load_config(cfg)


def test_cli_exit_2_on_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", "")
    assert main(["--config", cfg]) == 2
    assert "run.mode" in capsys.readouterr().err


def test_cli_missing_file_exit_2(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.ini")]) == 2


# ---------------------------------------------------------------------------
# report envelope and determinism


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear")
    cfg_path = tmp_path_factory.mktemp("cfg") / "linear.ini"
    cfg_path.write_text(
        f"[run]\nmode = linear-solve\nout = {out}\nseed = 3\n",
        encoding="utf-8")
    conf = load_config(str(cfg_path))
    code = run(conf)
    return code, out, str(cfg_path)


def test_linear_solve_green(linear_run):
    code, out, _ = linear_run
    assert code == 0
    report = load_report(out)
    assert report["passed"] is True
    checks = check_map(report)
    assert checks["converged"]["passed"]
    assert checks["contraction"]["kappa"] < 0.9
    assert checks["exact_identities"]["worst"] <= 1e-8


def test_report_envelope(linear_run):
    _, out, _ = linear_run
    report = load_report(out)
    for key in ("mode", "seed", "config", "config_hash", "versions",
                "checks", "passed", "error"):
        assert key in report
    assert report["mode"] == "linear-solve"
    assert report["seed"] == 3
    assert report["versions"]["muskat"]
    # the stored hash is the hash of the stored config
    assert report["config_hash"] == config_hash(report["config"])


def test_floats_serialized_at_full_precision(linear_run):
    # 17 significant digits round-trip exactly; parsing the report and
    # re-serializing any float must reproduce it bit for bit
    _, out, _ = linear_run
    report = load_report(out)

    def collect(node, acc):
        if isinstance(node, float):
            acc.append(node)
        elif isinstance(node, dict):
            for v in node.values():
                collect(v, acc)
        elif isinstance(node, list):
            for v in node:
                collect(v, acc)
        return acc

    floats = collect(report, [])
    assert floats
    assert any(0 < abs(v) < 1 for v in floats)
    for val in floats:
        assert float(format(val, ".17g")) == val


def test_ledger_csv_written(linear_run):
    _, out, _ = linear_run
    lines = (out / "ledger.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("window,")
    assert len(lines) >= 2


def test_identical_config_identical_bytes(linear_run):
    code, out, cfg_path = linear_run
    assert code == 0
    first = (out / "report.json").read_bytes()
    assert run(load_config(cfg_path)) == 0
    assert (out / "report.json").read_bytes() == first


def test_different_seed_different_report(tmp_path):
    texts = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        cfg = write_config(
            tmp_path / f"c{seed}.ini",
            f"[run]\nmode = model-solve\nout = {out}\nseed = {seed}\n")
        assert run(load_config(cfg)) == 0
        texts.append((out / "report.json").read_text(encoding="utf-8"))
    assert texts[0] != texts[1]


# ---------------------------------------------------------------------------
# modes


def test_holder_check_green(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = holder-check\nout = {out}\nseed = 2\n")
    assert run(load_config(cfg)) == 0
    report = load_report(out)
    names = {c["name"] for c in report["checks"]}
    assert "homogeneity_bulk" in names
    assert "triangle_inequality" in names
    assert all(c["passed"] for c in report["checks"])


def test_kernel_check_reduced_sweep(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = kernel-check\nout = {out}\nseed = 1\n"
        "[kernel]\nlateral = 64\n"
        "[sweep]\neps_values = 1, 0.1\ntimes = 0.25\ndims = 2\n"
        "bound_eps = 1, 0.1, 0.01\n")
    assert run(load_config(cfg)) == 0
    report = load_report(out)
    checks = check_map(report)
    assert checks["kernel_mass"]["worst"] <= 1e-6
    assert checks["kernel_derivative_mass"]["worst"] <= 1e-6
    assert checks["kernel_cross_agreement"]["worst"] <= 1e-6
    assert checks["kernel_bound_uniformity"]["passed"]
    for name in ("kernel_moments.csv", "kernel_agreement.csv", "ledger.csv"):
        assert (out / name).exists()


def test_kernel_check_aliasing_guard(tmp_path):
    # eps t too small for the lattice: rejected before any solve
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = kernel-check\nout = x\nseed = 1\n"
        "[kernel]\nlateral = 16\n")
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_model_solve_green(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = model-solve\nout = {out}\nseed = 4\n")
    assert run(load_config(cfg)) == 0
    report = load_report(out)
    checks = check_map(report)
    assert checks["model_residuals"]["passed"]
    assert checks["apriori_uniformity"]["spread"] < 3.0
    assert len(report["sweep"]) == 3


def test_nonlinear_solve_green(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = nonlinear-solve\nout = {out}\nseed = 5\n"
        "[grid]\nlateral = 8\nlevels = 13\n")
    assert run(load_config(cfg)) == 0
    report = load_report(out)
    checks = check_map(report)
    assert checks["converged"]["passed"]
    assert checks["interface_laws"]["passed"]
    assert checks["admissible"]["margin"] > 0.0
    assert report["solve"]["eps_final"] == 0.0
    for name in ("interface_final.csv", "interface_path.csv", "ledger.csv"):
        assert (out / name).exists()
    path = (out / "interface_path.csv").read_text(encoding="utf-8")
    assert path.splitlines()[0] == "t,rho_min,rho_mean,rho_max"


def test_oracle_compare_green(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = oracle-compare\nout = {out}\nseed = 7\n"
        "[grid]\nlateral = 8\n"
        "[oracle]\npoints = 512\n")
    assert run(load_config(cfg)) == 0
    report = load_report(out)
    checks = check_map(report)
    assert checks["oracle_self_convergence"]["gap"] <= 1e-5
    assert checks["trajectory_agreement"]["deviation"] <= 1e-3
    compare = (out / "interface_compare.csv").read_text(encoding="utf-8")
    lines = compare.splitlines()
    assert lines[0] == "t,strip,oracle,difference"
    assert len(lines) == 18  # header plus one row per time level


def test_degenerate_data_exit_2(tmp_path):
    # zero walls freeze the stationary state; the slope floor rejects it
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = nonlinear-solve\nout = {out}\nseed = 5\n"
        "[model]\nwall_plus = const:0\nwall_minus = const:0\n")
    assert run(load_config(cfg)) == 2
    report = load_report(out)
    assert report["passed"] is False
    assert report["error"]["kind"] == "config"
    assert "degenerate" in report["error"]["message"]


def test_budget_exhaustion_exit_3(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = nonlinear-solve\nout = {out}\nseed = 11\n"
        "[grid]\nlateral = 8\nlevels = 13\n"
        "[solve]\nmax_outer = 2\nmax_halvings = 0\n")
    assert run(load_config(cfg)) == 3
    report = load_report(out)
    assert report["error"]["kind"] == "solver"
    assert "ledger" in report["error"]


def test_gate_failure_exit_1(tmp_path):
    # tighten the residual gate below the lattice floor: honest red
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = model-solve\nout = {out}\nseed = 4\n"
        "[gates]\nresidual = 1e-6\n")
    assert run(load_config(cfg)) == 1
    report = load_report(out)
    assert report["passed"] is False
    assert report["error"] is None
    checks = check_map(report)
    assert not checks["model_residuals"]["passed"]


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        "[run]\nmode = holder-check\nseed = 2\n")
    code = main(["--config", cfg, "--out", str(out)])
    assert code == 0
    assert (out / "report.json").exists()


def test_interface_csv_matches_report_grid(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path / "c.ini",
        f"[run]\nmode = nonlinear-solve\nout = {out}\nseed = 5\n"
        "[grid]\nlateral = 8\nlevels = 13\n")
    assert run(load_config(cfg)) == 0
    rows = (out / "interface_final.csv").read_text(
        encoding="utf-8").splitlines()
    assert rows[0] == "x,rho"
    assert len(rows) == 9
    values = np.array([float(r.split(",")[1]) for r in rows[1:]])
    assert np.all(np.isfinite(values))
