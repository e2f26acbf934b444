"""Semi-implicit time stepping for the PNP system.

Each step solves, for all species concentrations and the potential at once,

    <(gamma c_i - b_i) / tau, v> = -a_{psi_i}(p_i, v) + <f_i, v>
    p_i = q_i phi + log c_i + 1                     (at every node)
    eps^2 a(phi, w) = <sum_i q_i c_i + f_phi, w>

with (gamma, b) = (1, c^m) for the first-order scheme and
(3/2, 2 c^m - c^{m-1} / 2) for the second-order one. The mobility psi_i is
frozen at D_i c^m (first order) or the extrapolation D_i (2 c^m - c^{m-1}).
The chemical potentials are eliminated nodally, so Newton works on (c, phi)
plus a mean multiplier when phi has no Dirichlet face.
"""

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.polynomial import legendre
from pydantic import BaseModel, Field as PydanticField

from pnp.core.basis import Field, FunctionSpace, PointFunction, interpolate
from pnp.core.errors import (
    ConfigError,
    LimiterError,
    NewtonDivergenceError,
    PositivityError,
    ProblemError,
    SolverError,
)
from pnp.core.forms import (
    Charge,
    FormConfig,
    MassKind,
    PoissonProblem,
    SparseOperator,
    assemble_form,
    direct_solve,
    mass_matrix,
    poisson_solve,
)
from pnp.core.mesh import BoundarySet

logger = structlog.stdlib.get_logger(__name__)

# f(t, x) with x of shape (..., dim)
TimeFunction = Callable[[float, np.ndarray], np.ndarray]

ALPHA_MIN = 1e-12
_ARMIJO = 1e-4


@dataclass(frozen=True)
class SpeciesSpec:
    valence: float
    initial: PointFunction
    diffusion: float = 1.0
    name: str = ""

    def __post_init__(self) -> None:
        if not self.diffusion > 0:
            raise ProblemError(f"diffusion coefficient must be positive, got {self.diffusion}")


@dataclass(frozen=True)
class Sources:
    """Manufactured forcing: one term per species plus the potential's."""

    species: tuple[TimeFunction, ...]
    potential: TimeFunction | None = None

    def species_at(self, space: FunctionSpace, t: float) -> list[np.ndarray]:
        x = space.node_points
        return [np.broadcast_to(f(t, x), (space.n_dofs,)).astype(float) for f in self.species]

    def potential_at(self, space: FunctionSpace, t: float) -> np.ndarray | None:
        if self.potential is None:
            return None
        return np.broadcast_to(self.potential(t, space.node_points), (space.n_dofs,)).astype(
            float
        )


@dataclass(frozen=True, eq=False)
class SystemState:
    concentrations: tuple[Field, ...]
    potential: Field
    chemical: tuple[Field, ...]
    t: float = 0.0
    step: int = 0
    # concentrations of step m-1, kept for the second-order scheme
    previous: tuple[Field, ...] | None = None

    @property
    def space(self) -> FunctionSpace:
        return self.potential.space

    @property
    def n_species(self) -> int:
        return len(self.concentrations)


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    time_order: int = 1
    form: FormConfig = field(default_factory=FormConfig)
    epsilon: float = 1.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fraction_to_boundary: float = 0.95
    limiter: bool = False
    mobility_floor: float = 1e-12
    mass: MassKind = "lumped"

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if self.time_order not in (1, 2):
            raise ConfigError(f"time order must be 1 or 2, got {self.time_order}")
        if not 0 < self.fraction_to_boundary < 1:
            raise ConfigError("fraction-to-boundary factor must lie in (0, 1)")
        if self.epsilon <= 0 or self.newton_tol <= 0 or self.mobility_floor <= 0:
            raise ConfigError("epsilon, Newton tolerance and mobility floor must be positive")
        if self.newton_max_iter < 1:
            raise ConfigError("at least one Newton iteration is required")
        if self.mass not in ("lumped", "consistent"):
            raise ConfigError(f"unknown mass variant {self.mass!r}")


class StepReport(BaseModel):
    step: int
    t: float
    dt: float
    newton_iterations: int = 0
    residual: float = float("nan")
    residual_history: list[float] = PydanticField(default_factory=list)
    min_concentration: list[float] = PydanticField(default_factory=list)
    limiter_active: list[bool] = PydanticField(default_factory=list)
    mobility_floor_active: bool = False
    # tau * sum_i a_{psi_i}(p_i, p_i)
    dissipation: float = 0.0
    converged: bool = False
    duration_ms: float = 0.0


# -- Newton -------------------------------------------------------------------


def fraction_to_boundary(c: np.ndarray, dc: np.ndarray, factor: float = 0.95) -> float:
    """Largest damped step min(1, factor * alpha_max) keeping c + alpha dc > 0."""
    decreasing = dc < 0
    if not np.any(decreasing):
        return 1.0
    alpha_max = float(np.min(-c[decreasing] / dc[decreasing]))
    return min(1.0, factor * alpha_max)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    positive: slice,
    *,
    tol: float = 1e-12,
    max_iter: int = 50,
    factor: float = 0.95,
) -> NewtonResult:
    """Damped Newton with a fraction-to-boundary rule on ``x[positive]``.

    Steps are cut by halving until the residual inf-norm decreases.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    merit = float(np.max(np.abs(r)))
    history = [merit]
    for iteration in range(max_iter + 1):
        if merit <= tol:
            return NewtonResult(x, iteration, merit, history)
        if iteration == max_iter:
            break
        dx = direct_solve(jacobian(x), -r)
        alpha = fraction_to_boundary(x[positive], dx[positive], factor)
        while True:
            if alpha < ALPHA_MIN:
                raise PositivityError(
                    f"step length underflow after {iteration} Newton iterations"
                )
            candidate = x + alpha * dx
            r_new = residual(candidate)
            merit_new = float(np.max(np.abs(r_new)))
            if np.isfinite(merit_new) and (
                merit_new <= (1 - _ARMIJO * alpha) * merit or merit_new <= tol
            ):
                break
            alpha *= 0.5
        x, r, merit = candidate, r_new, merit_new
        history.append(merit)
        logger.debug("newton_iteration", iteration=iteration + 1, residual=merit, alpha=alpha)
    raise NewtonDivergenceError(
        f"Newton did not reach {tol:.1e} in {max_iter} iterations (residual {merit:.3e})"
    )


# -- limiter ------------------------------------------------------------------


def _legendre_to_power(order: int) -> np.ndarray:
    """Matrix mapping Legendre coefficients to ascending power coefficients."""
    matrix = np.zeros((order + 1, order + 1))
    for j in range(order + 1):
        power = legendre.leg2poly(np.eye(order + 1)[j])
        matrix[: len(power), j] = power
    return matrix


def _critical_points(power: np.ndarray) -> np.ndarray:
    """Real roots in [-1, 1] of the derivative of each polynomial row, nan elsewhere.

    ``power`` holds ascending power coefficients, shape (..., k+1).
    """
    k = power.shape[-1] - 1
    if k < 2:
        return np.full((*power.shape[:-1], 0), np.nan)
    derivative = power[..., 1:] * np.arange(1, k + 1)
    lead = derivative[..., -1]
    degenerate = np.abs(lead) <= 1e-14 * np.max(np.abs(derivative), axis=-1, initial=0.0)
    lead = np.where(degenerate, 1.0, lead)
    monic = derivative[..., :-1] / lead[..., None]
    d = k - 1
    companion = np.zeros((*power.shape[:-1], d, d))
    companion[..., 1:, :-1] = np.eye(d - 1) if d > 1 else 0.0
    companion[..., :, -1] = -monic
    roots = np.linalg.eigvals(companion)
    valid = (np.abs(roots.imag) < 1e-10) & (np.abs(roots.real) <= 1.0) & ~degenerate[..., None]
    return np.where(valid, roots.real, np.nan)


def cell_minimum(space: FunctionSpace, values: np.ndarray) -> np.ndarray:
    """Estimated minimum of the Q^k field over every cell.

    Uses a 4(k+1)-point grid per axis, the Gauss-Lobatto nodes, and the
    critical points of the 1D restrictions along those grid lines.
    """
    basis = space.basis
    k, dim = basis.order, space.dim
    samples = np.unique(np.concatenate([np.linspace(-1, 1, 4 * (k + 1)), basis.nodes]))
    cells = space.gather(values)
    # tensor Legendre coefficients per cell, (n_cells, k+1, ..., k+1)
    coefficients = cells.reshape(-1, *([k + 1] * dim))
    for axis in range(dim):
        coefficients = np.moveaxis(
            np.tensordot(coefficients, basis.line.coefficients, axes=([axis + 1], [1])),
            -1,
            axis + 1,
        )
    legendre_at = legendre.legvander(samples, k)  # (s, k+1)
    to_power = _legendre_to_power(k)

    if dim == 1:
        grid = coefficients @ legendre_at.T
        critical = _critical_points(coefficients @ to_power.T)
        at_critical = np.einsum(
            "cj,crj->cr", coefficients, legendre.legvander(np.nan_to_num(critical, nan=1.0), k)
        )
        return np.minimum(grid.min(axis=1), np.min(at_critical, axis=1, initial=np.inf))

    grid = np.einsum("cij,si,tj->cst", coefficients, legendre_at, legendre_at)
    minimum = grid.reshape(len(cells), -1).min(axis=1)
    for axis in range(2):
        # restriction along `axis` at each sampled coordinate of the other axis
        line = (
            np.einsum("cij,tj->cti", coefficients, legendre_at)
            if axis == 0
            else np.einsum("cij,ti->ctj", coefficients, legendre_at)
        )
        critical = _critical_points(line @ to_power.T)
        filled = np.nan_to_num(critical, nan=1.0)
        at_critical = np.einsum("ctj,ctrj->ctr", line, legendre.legvander(filled, k))
        per_cell = at_critical.reshape(len(cells), -1).min(axis=1, initial=np.inf)
        minimum = np.minimum(minimum, per_cell)
    return minimum


def cell_averages(space: FunctionSpace, values: np.ndarray) -> np.ndarray:
    return space.gather(values) @ space.cell_weights / space.mesh.cell_measure


def limiter_theta(c: Field) -> np.ndarray:
    space = c.space
    if space.layout.continuity != "cell-local":
        raise LimiterError("the scaling limiter needs a cell-local (DDG) layout")
    average = cell_averages(space, c.values)
    if np.any(average <= 0):
        raise LimiterError(f"non-positive cell average {np.min(average):.3e}")
    minimum = cell_minimum(space, c.values)
    theta = np.ones_like(average)
    negative = minimum < 0
    theta[negative] = average[negative] / (average[negative] - minimum[negative])
    return np.minimum(theta, 1.0)


def apply_limiter(c: Field) -> Field:
    """c~ = cbar + theta (c - cbar) per cell, theta = min(1, cbar / (cbar - min c))."""
    space = c.space
    theta = limiter_theta(c)
    cells = space.gather(c.values)
    average = cells @ space.cell_weights / space.mesh.cell_measure
    limited = average[:, None] + theta[:, None] * (cells - average[:, None])
    cells = np.where((theta < 1)[:, None], limited, cells)
    values = c.values.copy()
    values[space.layout.cell_dofs] = cells
    return c.with_values(values)


# -- integrator ---------------------------------------------------------------


def chemical_potential(valence: float, c: Field, phi: Field) -> Field:
    return c.with_values(valence * phi.values + np.log(c.values) + 1.0)


class Integrator:
    """Advances a SystemState with the first- or second-order scheme."""

    def __init__(
        self,
        space: FunctionSpace,
        species: Sequence[SpeciesSpec],
        config: SchemeConfig,
        potential_boundary: BoundarySet | None = None,
        sources: Sources | None = None,
    ) -> None:
        config.form.check_space(space)
        if config.limiter and space.layout.continuity != "cell-local":
            raise LimiterError("the scaling limiter is only available for DDG")
        if sources is not None and len(sources.species) != len(species):
            raise ProblemError("one source term per species is required")
        self.space = space
        self.species = tuple(species)
        self.config = config
        self.sources = sources
        # species use natural conditions; phi carries its own
        self.species_form = config.form.with_boundary(None)
        self.potential_form = config.form.with_boundary(potential_boundary)
        self.poisson = PoissonProblem(space, self.potential_form, config.epsilon, config.mass)
        self.weights = space.lumped_weights
        self.mass = mass_matrix(space, config.mass)
        self.scaled_mass = sp.diags(1.0 / self.weights) @ self.mass
        self._potential_matrix = sp.diags(1.0 / self.weights) @ self.poisson.scaled_operator()
        self.has_multiplier = not self.poisson.has_dirichlet
        self.last_operators: list[SparseOperator] = []

    @property
    def n_species(self) -> int:
        return len(self.species)

    # -- states --

    def initial_state(self, initial_floor: float | None = None) -> SystemState:
        concentrations = []
        for spec in self.species:
            c = interpolate(self.space, spec.initial)
            if initial_floor is not None and np.any(c.values < initial_floor):
                logger.info(
                    "initial_floor_applied",
                    species=spec.name,
                    nodes=int(np.sum(c.values < initial_floor)),
                    floor=initial_floor,
                )
                c = c.with_values(np.maximum(c.values, initial_floor))
            if np.any(c.values <= 0):
                raise PositivityError("initial concentration is not positive at every node")
            concentrations.append(c)
        source = self.sources.potential_at(self.space, 0.0) if self.sources else None
        phi = poisson_solve(
            self.space,
            [Charge(s.valence, c) for s, c in zip(self.species, concentrations)],
            self.potential_form,
            source,
            epsilon=self.config.epsilon,
            t=0.0,
            mass=self.config.mass,
            problem=self.poisson,
        )
        chemical = tuple(
            chemical_potential(s.valence, c, phi) for s, c in zip(self.species, concentrations)
        )
        return SystemState(tuple(concentrations), phi, chemical)

    # -- nonlinear system --

    def _unpack(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray, float]:
        n = self.space.n_dofs
        cs = [x[i * n : (i + 1) * n] for i in range(self.n_species)]
        phi = x[self.n_species * n : (self.n_species + 1) * n]
        lam = float(x[-1]) if self.has_multiplier else 0.0
        return cs, phi, lam

    def _build_system(
        self,
        gamma: float,
        history: Sequence[np.ndarray],
        operators: Sequence[sp.csr_matrix],
        t_new: float,
    ):
        tau = self.config.dt
        n = self.space.n_dofs
        inv_w = sp.diags(1.0 / self.weights)
        scaled_ops = [inv_w @ a for a in operators]
        valences = [s.valence for s in self.species]
        species_sources = (
            self.sources.species_at(self.space, t_new)
            if self.sources
            else [np.zeros(n)] * self.n_species
        )
        potential_source = (self.sources.potential_at(self.space, t_new) if self.sources else None)
        if potential_source is None:
            potential_source = np.zeros(n)
        fixed, fixed_values = (
            self.poisson.pinned(t_new)
            if self.poisson.has_dirichlet
            else (np.array([], dtype=int), np.array([]))
        )
        is_fixed = np.zeros(n, dtype=bool)
        is_fixed[fixed] = True
        measure = self.space.mesh.domain.measure

        def residual(x: np.ndarray) -> np.ndarray:
            cs, phi, lam = self._unpack(x)
            parts = []
            rho = potential_source.copy()
            for i, c in enumerate(cs):
                p = valences[i] * phi + np.log(c) + 1.0
                drive = gamma * c - history[i] - tau * species_sources[i]
                parts.append(self.scaled_mass @ drive + tau * (scaled_ops[i] @ p))
                rho += valences[i] * c
            r_phi = self._potential_matrix @ phi + lam - self.scaled_mass @ rho
            r_phi[is_fixed] = phi[is_fixed] - fixed_values
            parts.append(r_phi)
            if self.has_multiplier:
                parts.append(np.array([self.weights @ phi / measure]))
            return np.concatenate(parts)

        keep = sp.diags((~is_fixed).astype(float))
        pinned = sp.diags(is_fixed.astype(float))

        def jacobian(x: np.ndarray) -> sp.csr_matrix:
            cs, _, _ = self._unpack(x)
            m = self.n_species
            size = m + 1 + int(self.has_multiplier)
            blocks: list[list[sp.spmatrix | None]] = [[None] * size for _ in range(size)]
            for i, c in enumerate(cs):
                blocks[i][i] = gamma * self.scaled_mass + tau * (scaled_ops[i] @ sp.diags(1.0 / c))
                blocks[i][m] = tau * valences[i] * scaled_ops[i]
                blocks[m][i] = keep @ (-valences[i] * self.scaled_mass)
            blocks[m][m] = keep @ self._potential_matrix + pinned
            if self.has_multiplier:
                blocks[m][m + 1] = sp.csr_matrix(np.ones((n, 1)))
                blocks[m + 1][m] = sp.csr_matrix(self.weights[None, :] / measure)
            return sp.bmat(blocks, format="csr")

        return residual, jacobian

    def _mobility(self, state: SystemState, second_order: bool) -> tuple[list[Field], bool]:
        mobilities, floored = [], False
        for spec, c, c_prev in zip(
            self.species,
            state.concentrations,
            state.previous or state.concentrations,
        ):
            values = c.values
            if second_order:
                values = 2.0 * c.values - c_prev.values
                if np.any(values < self.config.mobility_floor):
                    floored = True
                    values = np.maximum(values, self.config.mobility_floor)
            mobilities.append(c.with_values(spec.diffusion * values))
        return mobilities, floored

    def _step(self, state: SystemState, second_order: bool) -> tuple[SystemState, StepReport]:
        started = time.perf_counter()
        tau = self.config.dt
        t_new = state.t + tau
        report = StepReport(step=state.step + 1, t=t_new, dt=tau)
        mobilities, floored = self._mobility(state, second_order)
        report.mobility_floor_active = floored
        operators = [assemble_form(self.space, psi, self.species_form) for psi in mobilities]
        self.last_operators = operators

        if second_order:
            assert state.previous is not None
            gamma = 1.5
            history = [
                2.0 * c.values - 0.5 * c_prev.values
                for c, c_prev in zip(state.concentrations, state.previous)
            ]
        else:
            gamma = 1.0
            history = [c.values for c in state.concentrations]

        residual, jacobian = self._build_system(
            gamma, history, [op.matrix for op in operators], t_new
        )
        x0 = np.concatenate(
            [c.values for c in state.concentrations]
            + [state.potential.values]
            + ([np.zeros(1)] if self.has_multiplier else [])
        )
        n = self.space.n_dofs
        try:
            result = newton_solve(
                residual,
                jacobian,
                x0,
                slice(0, self.n_species * n),
                tol=self.config.newton_tol,
                max_iter=self.config.newton_max_iter,
                factor=self.config.fraction_to_boundary,
            )
        except SolverError as exc:
            report.duration_ms = (time.perf_counter() - started) * 1000
            raise type(exc)(str(exc), report=report, recommended_dt=tau / 2) from exc

        cs, phi_values, _ = self._unpack(result.x)
        phi = state.potential.with_values(phi_values)
        concentrations = [c.with_values(values) for c, values in zip(state.concentrations, cs)]
        chemical = [
            chemical_potential(s.valence, c, phi) for s, c in zip(self.species, concentrations)
        ]
        report.dissipation = tau * sum(
            float(p.values @ (op @ p.values)) for p, op in zip(chemical, operators)
        )
        limiter_active = [False] * self.n_species
        if self.config.limiter:
            for i, c in enumerate(concentrations):
                limited = apply_limiter(c)
                limiter_active[i] = not np.array_equal(limited.values, c.values)
                concentrations[i] = limited
            chemical = [
                chemical_potential(s.valence, c, phi)
                for s, c in zip(self.species, concentrations)
            ]

        report.newton_iterations = result.iterations
        report.residual = result.residual
        report.residual_history = result.history
        report.limiter_active = limiter_active
        report.min_concentration = [float(np.min(c.values)) for c in concentrations]
        report.converged = True
        report.duration_ms = (time.perf_counter() - started) * 1000
        if min(report.min_concentration) <= 0:
            raise PositivityError(
                "accepted step has a non-positive nodal concentration",
                report=report,
                recommended_dt=tau / 2,
            )
        new_state = SystemState(
            concentrations=tuple(concentrations),
            potential=phi,
            chemical=tuple(chemical),
            t=t_new,
            step=state.step + 1,
            previous=state.concentrations,
        )
        return new_state, report

    def step_first_order(self, state: SystemState) -> tuple[SystemState, StepReport]:
        return self._step(state, second_order=False)

    def step_second_order(self, state: SystemState) -> tuple[SystemState, StepReport]:
        if state.previous is None:
            raise SolverError("the second-order scheme needs the previous step's state")
        return self._step(state, second_order=True)

    def advance(self, state: SystemState) -> tuple[SystemState, StepReport]:
        """One step of the configured order; second order starts with a first-order step."""
        if self.config.time_order == 2 and state.previous is not None:
            return self.step_second_order(state)
        return self.step_first_order(state)
