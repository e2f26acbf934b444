"""Built-in PNP problems and the builder for user-defined ones.

Every species obeys  d_t c_i = div(D_i (grad c_i + q_i c_i grad phi)) + f_i
and the potential    -eps^2 lap phi = sum_i q_i c_i + f_phi.
"""

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import structlog

from pnp.core.basis import PointFunction
from pnp.core.errors import ProblemError
from pnp.core.expressions import compile_expression
from pnp.core.integrator import Sources, SpeciesSpec, TimeFunction
from pnp.core.mesh import BoundarySet, Dirichlet, Domain, ZeroFlux
from pnp.models import DtRule, UserProblemConfig

logger = structlog.stdlib.get_logger(__name__)

# grad f(t, x): (..., dim) -> (..., dim)
TimeGradient = Callable[[float, np.ndarray], np.ndarray]

FD_STEP = 1e-6
IDENTITY_TOL = 1e-8


def fd_gradient(f: TimeFunction, step: float = FD_STEP) -> TimeGradient:
    """Central-difference gradient of f(t, x) in x."""

    def gradient(t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        columns = []
        for a in range(x.shape[-1]):
            shift = np.zeros(x.shape[-1])
            shift[a] = step
            columns.append((f(t, x + shift) - f(t, x - shift)) / (2 * step))
        return np.stack(columns, axis=-1)

    return gradient


@dataclass(frozen=True)
class ExactSolution:
    valences: tuple[float, ...]
    concentrations: tuple[TimeFunction, ...]
    potential: TimeFunction
    concentration_gradients: tuple[TimeGradient, ...] | None = None
    potential_gradient: TimeGradient | None = None

    def concentration(self, i: int, t: float) -> PointFunction:
        return lambda x: self.concentrations[i](t, x)

    def concentration_gradient(self, i: int, t: float) -> Callable[[np.ndarray], np.ndarray]:
        gradients = self.concentration_gradients
        grad = gradients[i] if gradients else fd_gradient(self.concentrations[i])
        return lambda x: grad(t, x)

    def potential_at(self, t: float) -> PointFunction:
        return lambda x: self.potential(t, x)

    def potential_gradient_at(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        grad = self.potential_gradient or fd_gradient(self.potential)
        return lambda x: grad(t, x)

    def chemical(self, i: int, t: float) -> PointFunction:
        """p_i = q_i phi + log c_i + 1."""
        q = self.valences[i]
        return lambda x: q * self.potential(t, x) + np.log(self.concentrations[i](t, x)) + 1.0

    def chemical_gradient(self, i: int, t: float) -> Callable[[np.ndarray], np.ndarray]:
        q = self.valences[i]
        grad_c = self.concentration_gradient(i, t)
        grad_phi = self.potential_gradient_at(t)
        return lambda x: q * grad_phi(x) + grad_c(x) / self.concentrations[i](t, x)[..., None]


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: Domain
    species: tuple[SpeciesSpec, ...]
    potential_boundary: BoundarySet
    t_end: float
    default_dt: DtRule
    # second-order runs take this rule when given
    default_dt_second_order: DtRule | None = None
    species_boundary: BoundarySet | None = None
    epsilon: float = 1.0
    exact: ExactSolution | None = None
    sources: Sources | None = None
    initial_floor: float | None = None
    steady_state: tuple[float, ...] | None = None
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.potential_boundary.validate(self.domain)
        species_boundary = self.species_boundary or BoundarySet.uniform(self.domain)
        species_boundary.validate(self.domain)
        if species_boundary.has_dirichlet:
            raise ProblemError("concentrations only support zero-flux or periodic boundaries")
        if self.sources is not None and len(self.sources.species) != len(self.species):
            raise ProblemError("one source term per species is required")
        if self.exact is not None and len(self.exact.concentrations) != len(self.species):
            raise ProblemError("one exact concentration per species is required")

    @property
    def valences(self) -> tuple[float, ...]:
        return tuple(s.valence for s in self.species)

    def dt_rule(self, time_order: int) -> DtRule:
        if time_order == 2 and self.default_dt_second_order is not None:
            return self.default_dt_second_order
        return self.default_dt


# -- built-in problems ----------------------------------------------------------

SCALE = 1e-3


def cosine_manufactured_1d() -> ProblemSpec:
    """Two ions on [0, 1] with decaying cosine profiles.

    phi is pinned to 0 at x = 0 and insulated at x = 1; both species have
    zero flux at both ends.
    """
    a, pi = SCALE, np.pi

    def c1(t, x):
        return a * (np.cos(pi * x[..., 0]) + 2) * np.exp(-t)

    def c2(t, x):
        return a * (np.cos(2 * pi * x[..., 0]) + 1.5) * np.exp(-t)

    def phi(t, x):
        return a * (np.cos(2 * pi * x[..., 0]) - 1) * np.exp(-t)

    def c1_x(t, x):
        return -a * pi * np.sin(pi * x[..., 0]) * np.exp(-t)

    def c2_x(t, x):
        return -2 * a * pi * np.sin(2 * pi * x[..., 0]) * np.exp(-t)

    def c1_xx(t, x):
        return -a * pi**2 * np.cos(pi * x[..., 0]) * np.exp(-t)

    def c2_xx(t, x):
        return -4 * a * pi**2 * np.cos(2 * pi * x[..., 0]) * np.exp(-t)

    # phi has the same derivatives as c2
    phi_x, phi_xx = c2_x, c2_xx

    def f1(t, x):
        return -c1(t, x) - (c1_xx(t, x) + c1_x(t, x) * phi_x(t, x) + c1(t, x) * phi_xx(t, x))

    def f2(t, x):
        return -c2(t, x) - (c2_xx(t, x) - c2_x(t, x) * phi_x(t, x) - c2(t, x) * phi_xx(t, x))

    def f_phi(t, x):
        return -phi_xx(t, x) - c1(t, x) + c2(t, x)

    def as_gradient(g):
        return lambda t, x: g(t, x)[..., None]

    domain = Domain((0.0,), (1.0,))
    valences = (1.0, -1.0)
    return ProblemSpec(
        name="manufactured-1d",
        domain=domain,
        species=(
            SpeciesSpec(valences[0], lambda x: c1(0.0, x), name="c1"),
            SpeciesSpec(valences[1], lambda x: c2(0.0, x), name="c2"),
        ),
        potential_boundary=BoundarySet(
            {(0, "lower"): Dirichlet(lambda t, x: np.zeros(x.shape[:-1])), (0, "upper"): ZeroFlux()}
        ),
        t_end=0.1,
        default_dt=DtRule(coefficient=0.01, power=3),
        default_dt_second_order=DtRule(coefficient=0.01, power=2),
        exact=ExactSolution(
            valences=valences,
            concentrations=(c1, c2),
            potential=phi,
            concentration_gradients=(as_gradient(c1_x), as_gradient(c2_x)),
            potential_gradient=as_gradient(phi_x),
        ),
        sources=Sources(species=(f1, f2), potential=f_phi),
    )


def cosine_manufactured_2d() -> ProblemSpec:
    """Two ions on [0, pi]^2 around a slowly decaying cos(x) cos(y) mode.

    Both concentrations share one profile, so the net charge vanishes and
    phi is driven by its source alone. All boundaries are zero-flux.
    """
    a, rate = SCALE, 1e-3

    def decay(t):
        return np.exp(-rate * t)

    def mode(x):
        return np.cos(x[..., 0]) * np.cos(x[..., 1])

    def mode_grad(x):
        return np.stack(
            [
                -np.sin(x[..., 0]) * np.cos(x[..., 1]),
                -np.cos(x[..., 0]) * np.sin(x[..., 1]),
            ],
            axis=-1,
        )

    def c(t, x):
        return a * (decay(t) * mode(x) + 1)

    def phi(t, x):
        return a * decay(t) * mode(x)

    def grad(t, x):
        # c and phi share their gradient
        return a * decay(t) * mode_grad(x)

    def drift_divergence(t, x):
        # div(c grad phi) = grad c . grad phi + c lap phi, lap(mode) = -2 mode
        g = grad(t, x)
        return np.sum(g * g, axis=-1) + c(t, x) * (-2 * a * decay(t) * mode(x))

    def c_t(t, x):
        return -rate * a * decay(t) * mode(x)

    def lap_c(t, x):
        return -2 * a * decay(t) * mode(x)

    def f1(t, x):
        return c_t(t, x) - lap_c(t, x) - drift_divergence(t, x)

    def f2(t, x):
        return c_t(t, x) - lap_c(t, x) + drift_divergence(t, x)

    def f_phi(t, x):
        return 2 * a * decay(t) * mode(x)

    domain = Domain((0.0, 0.0), (np.pi, np.pi))
    valences = (1.0, -1.0)
    return ProblemSpec(
        name="manufactured-2d",
        domain=domain,
        species=(
            SpeciesSpec(valences[0], lambda x: c(0.0, x), name="c1"),
            SpeciesSpec(valences[1], lambda x: c(0.0, x), name="c2"),
        ),
        potential_boundary=BoundarySet.uniform(domain),
        t_end=0.01,
        default_dt=DtRule(coefficient=0.01, power=3),
        exact=ExactSolution(
            valences=valences,
            concentrations=(c, c),
            potential=phi,
            concentration_gradients=(grad, grad),
            potential_gradient=grad,
        ),
        sources=Sources(species=(f1, f2), potential=f_phi),
        notes={"dt": "time step not prescribed; defaults to 0.01 h^3"},
    )


def charge_relaxation_2d() -> ProblemSpec:
    """Source-free relaxation of two ions on [0, 1]^2 toward (0.2, 0.2, phi = 0).

    phi is grounded on x = 0 and x = 1 and insulated on the y faces. Both
    initial profiles vanish at the four corners, so interpolated nodal values
    are floored at ``initial_floor``.
    """
    pi = np.pi

    def c1(x):
        return pi / 20 * (np.sin(pi * x[..., 0]) + np.sin(pi * x[..., 1]))

    def c2(x):
        u, v = x[..., 0], x[..., 1]
        return 3 * (u**2 * (1 - u) ** 2 + v**2 * (1 - v) ** 2)

    domain = Domain((0.0, 0.0), (1.0, 1.0))
    grounded = Dirichlet(lambda t, x: np.zeros(x.shape[:-1]))
    return ProblemSpec(
        name="relaxation-2d",
        domain=domain,
        species=(SpeciesSpec(1.0, c1, name="c1"), SpeciesSpec(-1.0, c2, name="c2")),
        potential_boundary=BoundarySet.uniform(domain).with_faces(
            {(0, "lower"): grounded, (0, "upper"): grounded}
        ),
        t_end=1.0,
        default_dt=DtRule(absolute=1e-4),
        initial_floor=1e-8,
        steady_state=(0.2, 0.2, 0.0),
    )


PROBLEMS: dict[str, Callable[[], ProblemSpec]] = {
    "manufactured-1d": cosine_manufactured_1d,
    "manufactured-2d": cosine_manufactured_2d,
    "relaxation-2d": charge_relaxation_2d,
}


# -- user problems --------------------------------------------------------------

_FACES = {
    "x_lower": (0, "lower"),
    "x_upper": (0, "upper"),
    "y_lower": (1, "lower"),
    "y_upper": (1, "upper"),
}


def build_user_problem(config: UserProblemConfig) -> ProblemSpec:
    dim = len(config.lower)
    domain = Domain(
        tuple(config.lower),
        tuple(config.upper),
        tuple(config.periodic) if config.periodic is not None else None,
    )
    species = []
    for i, s in enumerate(config.species):
        initial = compile_expression(s.initial, dim).at_time(0.0)
        species.append(SpeciesSpec(s.valence, initial, s.diffusion, s.name or f"c{i + 1}"))

    faces = {}
    for key, condition in config.potential_boundary.items():
        axis, side = _FACES[key]
        if axis >= dim:
            raise ProblemError(f"face {key} does not exist on a {dim}D domain")
        faces[(axis, side)] = (
            Dirichlet(compile_expression(condition.value, dim))
            if condition.kind == "dirichlet"
            else ZeroFlux()
        )

    sources = None
    if any(s.source for s in config.species) or config.potential_source:
        sources = Sources(
            species=tuple(compile_expression(s.source or "0", dim) for s in config.species),
            potential=compile_expression(config.potential_source or "0", dim),
        )

    exact = None
    if config.exact_potential and all(s.exact for s in config.species):
        concentrations = tuple(compile_expression(s.exact or "", dim) for s in config.species)
        potential = compile_expression(config.exact_potential, dim)
        exact = ExactSolution(
            valences=tuple(s.valence for s in config.species),
            concentrations=concentrations,
            potential=potential,
            concentration_gradients=tuple(c.gradient() for c in concentrations),
            potential_gradient=potential.gradient(),
        )

    return ProblemSpec(
        name="user",
        domain=domain,
        species=tuple(species),
        potential_boundary=BoundarySet.uniform(domain).with_faces(faces),
        t_end=config.t_end,
        default_dt=DtRule(absolute=config.t_end / 100),
        epsilon=config.epsilon,
        exact=exact,
        sources=sources,
        initial_floor=config.initial_floor,
    )


def get_problem(problem: str | UserProblemConfig) -> ProblemSpec:
    if isinstance(problem, UserProblemConfig):
        return build_user_problem(problem)
    try:
        return PROBLEMS[problem]()
    except KeyError:
        known = ", ".join(sorted(PROBLEMS))
        raise ProblemError(f"unknown problem {problem!r} (known: {known})") from None


# -- manufactured identity --------------------------------------------------------


def _divergence(flux: TimeGradient, t: float, x: np.ndarray, step: float) -> np.ndarray:
    total = np.zeros(x.shape[:-1])
    for a in range(x.shape[-1]):
        shift = np.zeros(x.shape[-1])
        shift[a] = step
        total += (flux(t, x + shift)[..., a] - flux(t, x - shift)[..., a]) / (2 * step)
    return total


def verify_manufactured(
    problem: ProblemSpec, samples: int = 20, seed: int = 0, step: float = FD_STEP
) -> float:
    """Largest residual of the PDE identities at random (t, x), by finite differences.

    Also checks the closed-form gradients against differences of the values.
    """
    exact, sources = problem.exact, problem.sources
    if exact is None:
        raise ProblemError(f"{problem.name} has no exact solution to verify")
    rng = np.random.default_rng(seed)
    lower, upper = np.array(problem.domain.lower), np.array(problem.domain.upper)
    x = lower + (upper - lower) * rng.uniform(0.05, 0.95, (samples, problem.domain.dim))
    ts = rng.uniform(0.0, problem.t_end, samples)
    eps2 = problem.epsilon**2

    grad_phi = exact.potential_gradient or fd_gradient(exact.potential, step)
    worst = 0.0
    for t, point in zip(ts, x):
        point = point[None, :]
        rho = np.zeros(1)
        for i, spec in enumerate(problem.species):
            c = exact.concentrations[i]
            grad_c = (
                exact.concentration_gradients[i]
                if exact.concentration_gradients
                else fd_gradient(c, step)
            )
            q, d = spec.valence, spec.diffusion

            def flux(s, y, c=c, grad_c=grad_c, q=q, d=d):
                return d * (grad_c(s, y) + q * c(s, y)[..., None] * grad_phi(s, y))

            c_t = (c(t + step, point) - c(t - step, point)) / (2 * step)
            f = sources.species[i](t, point) if sources else 0.0
            worst = max(worst, float(np.max(np.abs(c_t - _divergence(flux, t, point, step) - f))))
            worst = max(
                worst,
                float(np.max(np.abs(grad_c(t, point) - fd_gradient(c, step)(t, point)))),
            )
            rho = rho + q * c(t, point)
        f_phi = sources.potential(t, point) if sources and sources.potential else 0.0
        laplacian = _divergence(grad_phi, t, point, step)
        worst = max(worst, float(np.max(np.abs(-eps2 * laplacian - rho - f_phi))))
        fd_phi = fd_gradient(exact.potential, step)
        worst = max(worst, float(np.max(np.abs(grad_phi(t, point) - fd_phi(t, point)))))
    logger.debug("manufactured_identity", problem=problem.name, residual=worst)
    return worst
