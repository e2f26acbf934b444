"""Mass, energy, positivity and error measurements of discrete states."""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field as PydanticField

from pnp.core.basis import Field, FunctionSpace, PointFunction, gauss_rule, interpolate
from pnp.core.errors import DiagnosticsError, PositivityError
from pnp.core.forms import FormConfig, assemble_exact_form, assemble_form, energy_norm_matrix
from pnp.core.integrator import SystemState, cell_averages

# grad f(x): (..., dim) -> (..., dim)
GradientFunction = Callable[[np.ndarray], np.ndarray]
EnergyVariant = Literal["lumped", "exact"]


class DiagnosticsRecord(BaseModel):
    t: float
    mass: list[float]
    energy_lumped: float
    energy_exact: float
    min_cell_average: list[float]
    min_node: list[float]
    newton_iterations: int = 0
    limiter_hits: int = 0
    errors: dict[str, float] = PydanticField(default_factory=dict)

    def flat(self) -> dict[str, float | int]:
        row: dict[str, float | int] = {"t": self.t}
        row |= {f"mass_{i + 1}": m for i, m in enumerate(self.mass)}
        row["energy_lumped"] = self.energy_lumped
        row["energy_exact"] = self.energy_exact
        row |= {f"min_cellavg_{i + 1}": m for i, m in enumerate(self.min_cell_average)}
        row |= {f"min_node_{i + 1}": m for i, m in enumerate(self.min_node)}
        row["newton_iters"] = self.newton_iterations
        row["limiter_hits"] = self.limiter_hits
        return row


@dataclass
class ConvergenceTable:
    ns: list[int]
    errors: dict[str, list[float]]
    rates: dict[str, list[float]] = field(default_factory=dict)

    def final_rate(self, metric: str) -> float:
        rates = self.rates.get(metric, [])
        return rates[-1] if rates else float("nan")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"N": self.ns})
        for metric, values in self.errors.items():
            frame[metric] = values
        for metric, values in self.rates.items():
            frame[f"R_{metric}"] = [float("nan"), *values]
        return frame


# -- conserved and monotone quantities ----------------------------------------


def _integrate(space: FunctionSpace, values: np.ndarray, points: int) -> np.ndarray:
    """Per-cell integrals of the Q^k field with a Gauss rule of ``points`` per axis."""
    reference, weights = gauss_rule(points).tensor(space.dim)
    return space.evaluate_cells(values, reference) @ weights * space.jacobian


def total_mass(c: Field) -> float:
    space = c.space
    return float(np.sum(_integrate(space, c.values, space.order + 1)))


@dataclass(frozen=True)
class PositivityReport:
    min_cell_average: list[float]
    min_node: list[float]

    @property
    def positive(self) -> bool:
        return min(self.min_cell_average) > 0 and min(self.min_node) > 0


def positivity_report(state: SystemState) -> PositivityReport:
    space = state.space
    return PositivityReport(
        min_cell_average=[
            float(np.min(cell_averages(space, c.values))) for c in state.concentrations
        ],
        min_node=[float(np.min(c.values)) for c in state.concentrations],
    )


@dataclass
class EnergyFunctional:
    """E(c, phi) = sum_i (c_i log c_i, 1) + eps^2/2 a(phi, phi)."""

    space: FunctionSpace
    potential_form: FormConfig
    epsilon: float = 1.0

    @cached_property
    def lumped_operator(self):
        return assemble_form(self.space, 1.0, self.potential_form)

    @cached_property
    def exact_operator(self):
        return assemble_exact_form(self.space, 1.0, self.potential_form)

    def __call__(self, state: SystemState, variant: EnergyVariant = "lumped") -> float:
        phi = state.potential.values
        if variant == "lumped":
            entropy = 0.0
            for c in state.concentrations:
                if np.any(c.values <= 0):
                    raise PositivityError("energy needs positive nodal concentrations")
                entropy += float(self.space.lumped_weights @ (c.values * np.log(c.values)))
            field_energy = float(phi @ (self.lumped_operator @ phi))
        else:
            points = self.space.order + 3
            reference, weights = gauss_rule(points).tensor(self.space.dim)
            entropy = 0.0
            for c in state.concentrations:
                at_points = self.space.evaluate_cells(c.values, reference)
                with np.errstate(invalid="ignore", divide="ignore"):
                    density = np.where(at_points > 0, at_points * np.log(at_points), np.nan)
                entropy += float(np.sum(density @ weights) * self.space.jacobian)
            field_energy = float(phi @ (self.exact_operator @ phi))
        return entropy + 0.5 * self.epsilon**2 * field_energy


def discrete_energy(
    state: SystemState,
    potential_form: FormConfig,
    epsilon: float = 1.0,
    variant: EnergyVariant = "lumped",
) -> float:
    return EnergyFunctional(state.space, potential_form, epsilon)(state, variant)


# -- errors against exact solutions ---------------------------------------------


def error_l2(v_h: Field, v: PointFunction) -> float:
    space = v_h.space
    reference, weights = gauss_rule(space.order + 3).tensor(space.dim)
    physical = space.mesh.to_physical(reference)
    diff = space.evaluate_cells(v_h.values, reference) - v(physical)
    return float(np.sqrt(np.sum(diff**2 @ weights) * space.jacobian))


def error_energy_projection(v_h: Field, v: PointFunction, config: FormConfig) -> float:
    """||I_h v - v_h||_E."""
    e = interpolate(v_h.space, v).values - v_h.values
    gram = energy_norm_matrix(v_h.space, config)
    return float(np.sqrt(max(float(e @ (gram @ e)), 0.0)))


def metric_eA(v_h: Field, grad_v: GradientFunction) -> float:
    """sqrt(mean over cells of |int_K grad(v - v_h)|^2)."""
    space = v_h.space
    reference, weights = gauss_rule(space.order + 3).tensor(space.dim)
    physical = space.mesh.to_physical(reference)
    diff = grad_v(physical) - space.gradient_cells(v_h.values, reference)
    integral = np.einsum("cqa,q->ca", diff, weights) * space.jacobian
    return float(np.sqrt(np.mean(np.sum(integral**2, axis=1))))


def metric_eG(v_h: Field, grad_v: GradientFunction) -> float:
    """sqrt(mean over the k-point Gauss grid of |grad(v - v_h)|^2)."""
    space = v_h.space
    reference, _ = gauss_rule(space.order).tensor(space.dim)
    physical = space.mesh.to_physical(reference)
    diff = grad_v(physical) - space.gradient_cells(v_h.values, reference)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=-1))))


def _order(coarse: float, fine: float) -> float:
    if not (coarse > 0 and fine > 0) or not np.isfinite(coarse * fine):
        return float("nan")
    return float(np.log2(coarse / fine))


def rate_table(rows: Sequence[tuple[int, dict[str, float]]]) -> ConvergenceTable:
    """Observed orders R = log2(e_N / e_2N) between consecutive rows."""
    ns = [int(n) for n, _ in rows]
    for coarse, fine in zip(ns, ns[1:]):
        if fine != 2 * coarse:
            raise DiagnosticsError(f"N must double between rows, got {coarse} -> {fine}")
    metrics: list[str] = []
    for _, errors in rows:
        metrics += [m for m in errors if m not in metrics]
    errors = {m: [float(e.get(m, float("nan"))) for _, e in rows] for m in metrics}
    rates = {
        m: [_order(a, b) for a, b in zip(values, values[1:])] for m, values in errors.items()
    }
    return ConvergenceTable(ns, errors, rates)
