import json

import numpy as np
import pandas as pd
import pytest

from pnp.core.diagnostics import DiagnosticsRecord
from pnp.core.errors import DiagnosticsError, ProblemError
from pnp.core.runner import (
    default_output_dir,
    execute_run,
    execute_sweep,
    nodal_distance_to_steady_state,
    penalty_hypothesis,
    plan_run,
)
from pnp.models import DtRule, RunConfig


def tiny(**overrides) -> RunConfig:
    data = {
        "problem": "manufactured-1d",
        "N": 4,
        "k": 1,
        "beta0": 4.0,
        "dt": {"absolute": 1e-3},
        "t_end": 3e-3,
        **overrides,
    }
    return RunConfig.model_validate(data)


def test_run_writes_outputs(tmp_path):
    result = execute_run(tiny(), tmp_path, run_id="run_test")
    assert {p.name for p in tmp_path.iterdir()} == {
        "diagnostics.csv",
        "errors.csv",
        "summary.json",
        "run_log.txt",
    }

    diagnostics = pd.read_csv(tmp_path / "diagnostics.csv")
    assert list(diagnostics.columns) == list(result.records[0].flat())
    assert len(diagnostics) == 4
    np.testing.assert_allclose(diagnostics["t"], [0.0, 1e-3, 2e-3, 3e-3], atol=1e-15)

    errors = pd.read_csv(tmp_path / "errors.csv")
    assert set(errors["variable"]) == {"c1", "c2", "p1", "p2", "phi"}
    assert set(errors["norm"]) == {"L2", "E", "eA", "eG"}
    assert (errors["value"] >= 0).all()

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["run_id"] == "run_test"
    assert summary["status"] == "completed"
    assert summary["n_steps"] == 3
    assert summary["stable"] is True

    log = (tmp_path / "run_log.txt").read_text()
    assert "gamma(beta1) = 1.0" in log
    assert "dt_rule = dt=0.001" in log


def test_runs_are_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    execute_run(tiny(), first)
    execute_run(tiny(), second)
    for name in ("diagnostics.csv", "errors.csv", "summary.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_record_every(tmp_path):
    result = execute_run(tiny(record_every=2), tmp_path)
    assert [round(r.t, 12) for r in result.records] == [0.0, 2e-3, 3e-3]


def test_matrix_dump(tmp_path):
    execute_run(tiny(dump_matrix=True), tmp_path)
    for name in ("poisson.coo", "mobility_1.coo", "mobility_2.coo"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines and len(lines[0].split()) == 3


def test_relaxation_run_keeps_mass_and_positivity(tmp_path):
    config = RunConfig(
        problem="relaxation-2d",
        N=3,
        k=1,
        beta0=4.0,
        dt=DtRule(absolute=1e-3),
        t_end=2e-3,
    )
    result = execute_run(config, tmp_path)
    first, last = result.records[0], result.records[-1]
    assert isinstance(last, DiagnosticsRecord)
    np.testing.assert_allclose(last.mass, first.mass, rtol=1e-11)
    assert min(last.min_node) > 0
    assert last.energy_lumped <= first.energy_lumped + 1e-12
    assert not (tmp_path / "errors.csv").exists()


def test_unknown_problem(tmp_path):
    with pytest.raises(ProblemError):
        execute_run(tiny(problem="nope"), tmp_path)


def test_plan_uses_problem_defaults():
    plan = plan_run(RunConfig(problem="manufactured-1d", N=8, k=2))
    assert plan.dt_rule == "dt=0.01*h^3"
    assert plan.scheme.dt * plan.n_steps == pytest.approx(0.1)
    assert plan.gamma == pytest.approx(4.0)
    notes = plan_run(tiny(problem="manufactured-2d")).log_lines
    assert any(line.startswith("note[") for line in notes)


def test_penalty_hypothesis():
    assert penalty_hypothesis(0.0, 2, "ddg").startswith("beta1=0")
    assert "superconvergent" in penalty_hypothesis(1 / 12, 2, "ddg")
    assert penalty_hypothesis(0.3, 2, "ddg") == "neither analysed beta1 choice"
    assert penalty_hypothesis(0.0, 2, "fem").startswith("beta1=0")


def test_default_output_dir():
    assert default_output_dir(tiny()).name == "manufactured-1d_ddg_k1_o1_N4"
    assert default_output_dir(tiny(output_dir="custom")).name == "custom"


def test_sweep_writes_rates(tmp_path):
    table, members = execute_sweep(tiny(), [8, 4], tmp_path)
    assert [m.n for m in members] == [4, 8]
    assert not any(m.failed for m in members)
    frame = pd.read_csv(tmp_path / "sweep.csv")
    assert list(frame["N"]) == [4, 8]
    assert "R_c1_L2" in frame.columns
    assert list(frame["status"]) == ["completed", "completed"]
    assert np.isnan(frame["R_c1_L2"][0])
    assert table.final_rate("c1_L2") > 1.0
    assert (tmp_path / "N4" / "summary.json").exists()


def test_sweep_needs_doubling(tmp_path):
    with pytest.raises(DiagnosticsError):
        execute_sweep(tiny(), [4, 6], tmp_path)
    assert not (tmp_path / "sweep.csv").exists()


def test_steady_state_distance(tmp_path):
    result = execute_run(tiny(), tmp_path)
    assert result.final_state is not None
    state = result.final_state
    values = np.concatenate([c.values for c in state.concentrations] + [state.potential.values])
    distance = nodal_distance_to_steady_state(state, (0.0, 0.0, 0.0))
    assert distance == np.max(np.abs(values))


@pytest.mark.slow
def test_ddg_first_order_rate(tmp_path):
    base = tiny(t_end=2e-3, dt={"absolute": 1e-4})
    table, _ = execute_sweep(base, [10, 20, 40], tmp_path)
    assert table.final_rate("c1_L2") > 1.8


@pytest.mark.slow
@pytest.mark.parametrize(("k", "n", "expected"), [(1, 20, 8.75e-6), (2, 10, 1.49e-6)])
def test_ddg_error_magnitude(tmp_path, k, n, expected):
    config = RunConfig(problem="manufactured-1d", N=n, k=k, beta0=4.0, beta1="superconvergent")
    error = execute_run(config, tmp_path).error("c1", "L2")
    assert expected / 3 < error < expected * 3


@pytest.mark.slow
def test_relaxation_reaches_steady_state(tmp_path):
    config = RunConfig(
        problem="relaxation-2d", N=8, k=1, beta0=4.0, dt=DtRule(absolute=5e-3), t_end=0.5
    )
    result = execute_run(config, tmp_path)
    assert result.summary.n_steps == 100
    first, last = result.records[0], result.records[-1]
    np.testing.assert_allclose(last.mass, first.mass, rtol=1e-11)
    assert all(min(r.min_node) > 0 for r in result.records)
    energies = [r.energy_lumped for r in result.records]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert result.final_state is not None
    assert nodal_distance_to_steady_state(result.final_state, (0.2, 0.2, 0.0)) < 1e-3


@pytest.mark.slow
def test_second_order_error_magnitude(tmp_path):
    config = RunConfig(
        problem="manufactured-1d", N=20, k=1, beta0=4.0, beta1="superconvergent", time_order=2
    )
    error = execute_run(config, tmp_path).error("c1", "L2")
    assert 7.29e-7 / 3 < error < 7.29e-7 * 3


@pytest.mark.slow
def test_second_order_rates(tmp_path):
    base = RunConfig(
        problem="manufactured-1d",
        N=20,
        k=1,
        beta0=4.0,
        beta1="superconvergent",
        time_order=2,
        dt=DtRule(coefficient=0.01, power=2),
        t_end=0.02,
    )
    table, _ = execute_sweep(base, [20, 40], tmp_path)
    for metric in ("c1_L2", "c2_L2", "phi_L2"):
        assert table.final_rate(metric) == pytest.approx(2.0, abs=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("method", ["ddg", "fem"])
def test_first_order_superconvergent_rates(tmp_path, method):
    base = RunConfig(
        problem="manufactured-1d",
        method=method,
        N=20,
        k=1,
        beta0=4.0,
        beta1="superconvergent" if method == "ddg" else 0.0,
        dt=DtRule(coefficient=0.01, power=2),
        t_end=1e-3,
    )
    table, _ = execute_sweep(base, [20, 40, 80], tmp_path)
    for metric in ("c1_eG", "phi_eG", "c1_eA"):
        assert table.final_rate(metric) >= 1.85, metric
    for metric in ("c1_L2", "phi_L2"):
        assert table.final_rate(metric) == pytest.approx(2.0, abs=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("method", ["ddg", "fem"])
@pytest.mark.parametrize(("k", "tolerance"), [(1, 0.1), (2, 0.15)])
def test_two_dimensional_rates(tmp_path, method, k, tolerance):
    base = RunConfig(
        problem="manufactured-2d",
        method=method,
        N=10,
        k=k,
        beta0=4.0,
        dt=DtRule(absolute=1e-3),
        t_end=0.01,
    )
    table, _ = execute_sweep(base, [10, 20], tmp_path)
    for metric in ("c1_L2", "phi_L2"):
        assert table.final_rate(metric) == pytest.approx(k + 1, abs=tolerance), metric


@pytest.mark.slow
def test_relaxation_keeps_mass_over_a_thousand_steps(tmp_path):
    config = RunConfig(
        problem="relaxation-2d",
        N=8,
        k=1,
        beta0=4.0,
        dt=DtRule(absolute=1e-4),
        t_end=0.1,
        record_every=100,
    )
    result = execute_run(config, tmp_path)
    assert result.summary.n_steps == 1000
    first = result.records[0]
    for record in result.records[1:]:
        np.testing.assert_allclose(record.mass, first.mass, rtol=1e-11)


@pytest.mark.slow
@pytest.mark.parametrize(
    ("n", "dt", "t_end", "record_every"), [(20, 1e-4, 1.0, 10), (40, 1e-7, 1e-5, 1)]
)
def test_relaxation_stays_positive_without_limiter(tmp_path, n, dt, t_end, record_every):
    config = RunConfig(
        problem="relaxation-2d",
        N=n,
        k=1,
        beta0=4.0,
        dt=DtRule(absolute=dt),
        t_end=t_end,
        limiter=False,
        record_every=record_every,
    )
    result = execute_run(config, tmp_path)
    assert result.summary.stable
    for record in result.records:
        assert min(record.min_cell_average) > 0
        assert min(record.min_node) > 0
