import math

import numpy as np
import pytest

from pnp.core.basis import interpolate
from pnp.core.diagnostics import (
    DiagnosticsRecord,
    EnergyFunctional,
    discrete_energy,
    error_energy_projection,
    error_l2,
    metric_eA,
    metric_eG,
    positivity_report,
    rate_table,
    total_mass,
)
from pnp.core.errors import DiagnosticsError, PositivityError
from pnp.core.forms import FormConfig
from pnp.core.integrator import SystemState
from pnp.core.mesh import Domain
from tests.conftest import make_space, unit_interval, unit_square


def _state(space, concentrations, phi=None):
    phi = phi if phi is not None else space.constant(0.0)
    return SystemState(tuple(concentrations), phi, tuple(concentrations))


def test_total_mass():
    space = make_space(Domain((0.0, 0.0), (np.pi, np.pi)), 3, 2)
    assert total_mass(space.constant(2.0)) == pytest.approx(2 * np.pi**2)
    c = interpolate(space, lambda x: x[..., 0] * x[..., 1] ** 2)
    assert total_mass(c) == pytest.approx(np.pi**2 / 2 * np.pi**3 / 3)


@pytest.mark.parametrize("method", ["fem", "ddg"])
def test_errors_vanish_on_the_discrete_space(method):
    space = make_space(unit_square(), 3, 2, method)

    def f(x):
        return x[..., 0] ** 2 * x[..., 1]

    def grad_f(x):
        return np.stack([2 * x[..., 0] * x[..., 1], x[..., 0] ** 2], axis=-1)

    v_h = interpolate(space, f)
    assert error_l2(v_h, f) < 1e-13
    assert metric_eA(v_h, grad_f) < 1e-13
    assert metric_eG(v_h, grad_f) < 1e-12
    assert error_energy_projection(v_h, f, FormConfig(method)) < 1e-12


def test_l2_error_of_a_constant_offset():
    space = make_space(unit_interval(), 4, 1)
    assert error_l2(space.constant(1.5), lambda x: 1.0 + 0 * x[..., 0]) == pytest.approx(0.5)


def test_energy_of_a_constant_state():
    space = make_space(unit_interval(), 4, 2)
    c = space.constant(2.0)
    state = _state(space, [c, c])
    energy = EnergyFunctional(space, FormConfig())
    assert energy(state, "lumped") == pytest.approx(4 * np.log(2))
    assert energy(state, "exact") == pytest.approx(4 * np.log(2))
    assert discrete_energy(state, FormConfig()) == pytest.approx(4 * np.log(2))


def test_energy_includes_the_field():
    space = make_space(unit_interval(), 8, 2)
    phi = interpolate(space, lambda x: x[..., 0])
    state = _state(space, [space.constant(1.0)], phi)
    # (c log c, 1) vanishes; eps^2 / 2 * |grad phi|^2
    assert EnergyFunctional(space, FormConfig(), epsilon=0.5)(state) == pytest.approx(0.125)


def test_exact_energy_is_nan_where_concentration_vanishes():
    space = make_space(unit_interval(), 2, 2)
    c = interpolate(space, lambda x: (x[..., 0] - 0.25) ** 2 - 1e-3)
    state = _state(space, [c])
    energy = EnergyFunctional(space, FormConfig())
    assert math.isnan(energy(state, "exact"))
    with pytest.raises(PositivityError):
        energy(state, "lumped")


def test_positivity_report():
    space = make_space(unit_interval(), 2, 1)
    c = space.field(np.array([1.0, 2.0, -0.5, 3.0]))
    report = positivity_report(_state(space, [c, space.constant(1.0)]))
    assert report.min_node == [-0.5, 1.0]
    assert report.min_cell_average == [1.25, 1.0]
    assert not report.positive


class TestRateTable:
    def test_second_order_rates(self):
        table = rate_table([(10, {"e": 1e-2}), (20, {"e": 2.5e-3}), (40, {"e": 6.25e-4})])
        assert table.rates["e"] == pytest.approx([2.0, 2.0])
        assert table.final_rate("e") == pytest.approx(2.0)

    def test_n_must_double(self):
        with pytest.raises(DiagnosticsError):
            rate_table([(10, {"e": 1.0}), (30, {"e": 0.1})])

    def test_single_row_has_no_rates(self):
        frame = rate_table([(10, {"e": 1e-2})]).to_frame()
        assert list(frame.columns) == ["N", "e", "R_e"]
        assert math.isnan(frame["R_e"][0])

    def test_non_positive_errors_give_nan(self):
        table = rate_table([(4, {"e": 0.0}), (8, {"e": 1e-3})])
        assert math.isnan(table.rates["e"][0])

    def test_missing_metrics_are_nan(self):
        table = rate_table([(4, {"e": 1e-2}), (8, {})])
        assert math.isnan(table.errors["e"][1])


def test_record_columns():
    record = DiagnosticsRecord(
        t=0.5,
        mass=[1.0, 2.0],
        energy_lumped=0.1,
        energy_exact=0.2,
        min_cell_average=[0.3, 0.4],
        min_node=[0.01, 0.02],
        newton_iterations=3,
        limiter_hits=1,
    )
    assert list(record.flat()) == [
        "t",
        "mass_1",
        "mass_2",
        "energy_lumped",
        "energy_exact",
        "min_cellavg_1",
        "min_cellavg_2",
        "min_node_1",
        "min_node_2",
        "newton_iters",
        "limiter_hits",
    ]


def test_energy_of_the_relaxed_state():
    space = make_space(unit_square(), 2, 1)
    c = space.constant(0.2)
    energy = EnergyFunctional(space, FormConfig())(_state(space, [c, c]))
    assert energy == pytest.approx(2 * 0.2 * np.log(0.2))


def test_positivity_of_a_single_cell():
    space = make_space(unit_interval(), 1, 1)
    report = positivity_report(_state(space, [space.field(np.array([-0.1, 0.5]))]))
    assert report.min_node == [-0.1]
    assert report.min_cell_average == [pytest.approx(0.2)]


def test_rate_table_oracles():
    assert rate_table([(10, {"e": 1e-3}), (20, {"e": 1.25e-4})]).rates["e"] == [
        pytest.approx(3.0)
    ]
    assert rate_table([(5, {"e": 0.1}), (10, {"e": 0.1})]).rates["e"] == [0.0]
