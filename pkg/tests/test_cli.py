import json

import pytest
from typer.testing import CliRunner

from pnp.cli.commands import ExitCode
from pnp.cli.router import cli_app

runner = CliRunner()


@pytest.fixture
def write_config(tmp_path):
    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(data if isinstance(data, str) else json.dumps(data))
        return path

    return write


TINY = {
    "problem": "manufactured-1d",
    "N": 4,
    "k": 1,
    "dt": {"absolute": 1e-3},
    "t_end": 2e-3,
}


def test_gamma_table():
    result = runner.invoke(cli_app, ["gamma", "--k", "2", "--samples", "0"])
    assert result.exit_code == ExitCode.OK
    assert "3.0833" in result.output
    assert "4" in result.output


def test_gamma_rejects_bad_beta1():
    result = runner.invoke(cli_app, ["gamma", "--k", "2", "--beta1", "big"])
    assert result.exit_code == ExitCode.CONFIG


def test_run_writes_outputs(write_config, tmp_path):
    path = write_config(TINY)
    out = tmp_path / "out"
    result = runner.invoke(cli_app, ["run", str(path), "-o", str(out), "--dump-matrix"])
    assert result.exit_code == ExitCode.OK, result.output
    assert (out / "diagnostics.csv").exists()
    assert (out / "poisson.coo").exists()
    assert "manufactured-1d" in result.output


def test_negative_n_names_the_field(write_config):
    path = write_config({**TINY, "N": -1})
    result = runner.invoke(cli_app, ["run", str(path)])
    assert result.exit_code == ExitCode.CONFIG
    assert "N" in result.output


def test_invalid_json_reports_position(write_config):
    path = write_config('{"problem": "manufactured-1d",\n "N": }')
    result = runner.invoke(cli_app, ["run", str(path)])
    assert result.exit_code == ExitCode.CONFIG
    assert "line 2" in result.output


def test_missing_config(tmp_path):
    result = runner.invoke(cli_app, ["run", str(tmp_path / "absent.json")])
    assert result.exit_code == ExitCode.CONFIG


def test_unknown_problem_is_a_config_error(write_config, tmp_path):
    path = write_config({**TINY, "problem": "nope"})
    result = runner.invoke(cli_app, ["run", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == ExitCode.CONFIG


def test_sweep(write_config, tmp_path):
    path = write_config(TINY)
    out = tmp_path / "sweep"
    result = runner.invoke(cli_app, ["sweep", str(path), "--n", "4", "--n", "8", "-o", str(out)])
    assert result.exit_code == ExitCode.OK, result.output
    assert (out / "sweep.csv").exists()


def test_sweep_rejects_non_doubling(write_config, tmp_path):
    path = write_config(TINY)
    args = ["sweep", str(path), "--n", "4", "--n", "5", "-o", str(tmp_path / "sweep")]
    assert runner.invoke(cli_app, args).exit_code == ExitCode.CONFIG


def test_check_single_suite():
    result = runner.invoke(cli_app, ["check", "--suite", "newton"])
    assert result.exit_code == ExitCode.OK
    assert "checks passed" in result.output


def test_check_unknown_suite():
    result = runner.invoke(cli_app, ["check", "--suite", "speed"])
    assert result.exit_code == ExitCode.CONFIG
