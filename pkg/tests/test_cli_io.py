import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from biharmonic_nodal import cli
from biharmonic_nodal.cli_io import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    ConfigError,
    GridBlock,
    RunConfig,
    RunSummary,
    format_config,
    load_config,
    parse_config,
    read_field,
    run,
    write_solution,
    write_trajectory,
)
from biharmonic_nodal.flow import TrajectoryRecord

REFERENCE = """
[grid]
dim_n = 5
r_max = 20
n_nodes = 400

[nonlinearity]
term1 = 1.0 2.0
"""


def test_minimal_reference_config():
    cfg = parse_config(REFERENCE)
    assert cfg == RunConfig()


def test_exponent_violation_cites_bound():
    with pytest.raises(ConfigError) as exc:
        parse_config(REFERENCE.replace("1.0 2.0", "1.0 9"))
    assert "2_* - 2 = 8" in str(exc.value)


def test_all_violations_reported():
    text = REFERENCE.replace("dim_n = 5", "dim_n = 4").replace("n_nodes = 400", "n_nodes = 1")
    text += "\n[flow]\nshrink = 2\nbogus = 1\n\n[extra]\nx = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    v = exc.value.violations
    assert any("dim_n" in m for m in v)
    assert any("n_nodes" in m for m in v)
    assert any("bogus" in m for m in v)
    assert any("[extra]" in m for m in v)


def test_syntax_error_has_line_number():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[grid]\ndim_n = 5\nthis line is broken\n")


def test_config_round_trip():
    cfg = RunConfig(
        grid=GridBlock(6, 15.5, 7),
        terms=((0.5, 1.0), (2.0, 0.25)),
    )
    cfg = replace(cfg, potential=replace(cfg.potential, kind="table", values=tuple(np.linspace(1, 2, 7))), seed=9)
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config(format_config(RunConfig())) == RunConfig()


def test_solution_round_trip(tmp_path, small_problem, rng):
    u = rng.normal(size=200) * 10.0 ** rng.uniform(-5, 5, size=200)
    path = write_solution(tmp_path / "s.csv", small_problem, u)
    r, back = read_field(path)
    assert open(path).readline().strip() == "r,u,laplacian_u"
    np.testing.assert_array_equal(back, u)
    np.testing.assert_array_equal(r, small_problem.grid.radii)


def test_empty_trajectory_header_only(tmp_path):
    path = write_trajectory(tmp_path / "t.csv", TrajectoryRecord())
    assert path.read_text().strip() == "step,energy,grad_norm,dist_plus,dist_minus"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    cfg = replace(RunConfig(grid=GridBlock(n_nodes=200)))
    out1 = tmp_path_factory.mktemp("run1")
    out2 = tmp_path_factory.mktemp("run2")
    return cfg, run(cfg, out1), out1, run(cfg, out2), out2


def test_run_outputs(small_run):
    cfg, summary, out, _, _ = small_run
    for name in ("positive", "negative", "nodal"):
        assert (out / f"solution_{name}.csv").exists()
        assert (out / f"solution_{name}.dat").exists()
        assert (out / f"trajectory_{name}.csv").read_text().startswith("step,energy")
    assert set(summary.solutions) == {"positive", "negative", "nodal"}
    doc = json.loads((out / "summary.json").read_text())
    assert parse_config(doc["config"]) == cfg
    assert RunSummary.from_json(summary.to_json()).to_json() == summary.to_json()
    assert summary.checks["nodal_sign"] and summary.checks["distinct"]


def test_run_is_deterministic(small_run):
    _, _, out1, _, out2 = small_run
    for name in ("summary.json", "solution_positive.csv", "solution_nodal.csv", "trajectory_nodal.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_budget_exhaustion_exit_code(tmp_path):
    cfg = RunConfig(grid=GridBlock(n_nodes=100))
    cfg = replace(cfg, flow=replace(cfg.flow, max_steps=1))
    summary = run(cfg, tmp_path)
    assert summary.exit_code == EXIT_BUDGET
    assert summary.error["phase"] == "signed"
    assert (tmp_path / "summary.json").exists()


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ndim_n = 4\n")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "dim_n" in capsys.readouterr().err


def test_cli_small_commands(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(format_config(RunConfig(grid=GridBlock(n_nodes=100))))
    common = ["--config", str(cfg), "--out", str(tmp_path), "--seed", "3"]
    assert cli.main(["flow", *common, "--scale", "5"]) == 0
    assert (tmp_path / "trajectory.csv").exists()
    assert json.loads((tmp_path / "outcome.json").read_text())["tag"] == "ConvergedZero"
    assert cli.main(["flow", *common, "--field", str(tmp_path / "terminal.csv")]) == 0
    assert cli.main(["project", *common]) == 0
    assert (tmp_path / "projection.csv").read_text().startswith("r,u,positive,dual,multiplier")
    assert cli.main(["oracle", *common, "--nodes", "6", "--count", "10"]) == 0
    code = cli.main(["linear-check", *common, "--count", "5"])
    report = json.loads((tmp_path / "linear_check.json").read_text())
    assert code == (0 if report["failures"] == 0 else 6)


def test_reference_fixture_file():
    path = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"
    assert load_config(path) == RunConfig()
