"""Oracle-based property suites behind ``pnp check``."""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import structlog

from pnp.core.basis import FunctionSpace, gauss_lobatto_rule, gauss_rule
from pnp.core.forms import (
    FormConfig,
    MobilityBounds,
    assemble_form,
    check_stability,
    energy_norm_matrix,
    gamma_of_beta1,
    gamma_sampled,
    lpsi_norm_sq,
    mass_matrix,
    solve_Lpsi,
)
from pnp.core.integrator import apply_limiter, cell_averages, cell_minimum, fraction_to_boundary
from pnp.core.mesh import Domain, build_mesh
from pnp.core.problems import IDENTITY_TOL, PROBLEMS, verify_manufactured

logger = structlog.stdlib.get_logger(__name__)


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    tolerance: float

    @property
    def detail(self) -> str:
        return f"{self.value:.3e} (tol {self.tolerance:.1e})"


def _result(suite: str, name: str, value: float, tolerance: float) -> CheckResult:
    return CheckResult(suite, name, bool(value <= tolerance), float(value), tolerance)


def check_quadrature(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for n in range(2, 9):
        rule = gauss_lobatto_rule(n)
        worst = max(
            abs(rule.weights @ rule.nodes**j - (1 - (-1) ** (j + 1)) / (j + 1))
            for j in range(2 * n - 2)
        )
        results.append(_result("quadrature", f"gauss_lobatto_{n}", worst, 1e-13))
    for n in range(1, 9):
        rule = gauss_rule(n)
        worst = max(
            abs(rule.weights @ rule.nodes**j - (1 - (-1) ** (j + 1)) / (j + 1))
            for j in range(2 * n)
        )
        results.append(_result("quadrature", f"gauss_{n}", worst, 1e-13))
    return results


def check_gamma(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for k in (1, 2, 3):
        for beta1 in (0.0, 1.0 / (2 * k * (k + 1)), 0.25):
            exact = gamma_of_beta1(k, beta1)
            sampled = gamma_sampled(k, beta1, samples=100_000, rng=rng)
            # sampling can only approach the supremum from below
            gap = (exact - sampled) / exact if sampled <= exact * (1 + 1e-12) else np.inf
            results.append(_result("gamma", f"k{k}_beta1_{beta1:.4g}", gap, 1e-3))
    return results


def _periodic_space(k: int, n: int) -> FunctionSpace:
    mesh = build_mesh(Domain((0.0,), (1.0,), (True,)), n)
    return FunctionSpace.build(mesh, k, "cell-local")


def check_lpsi(rng: np.random.Generator) -> list[CheckResult]:
    space = _periodic_space(2, 8)
    config = FormConfig("ddg", beta0=10.0, beta1=0.0)
    psi = space.field(1.0 + rng.uniform(0, 1, space.n_dofs))
    f, g, v = (rng.standard_normal(space.n_dofs) for _ in range(3))
    consistent = mass_matrix(space, "consistent")
    operator = assemble_form(space, psi, config)
    lf = solve_Lpsi(space, f, psi, config).values
    lg = solve_Lpsi(space, g, psi, config).values

    mean = space.lumped_weights @ f / space.mesh.domain.measure
    residual = np.max(np.abs(operator @ lf - consistent @ (f - mean)))
    symmetry = abs(lf @ consistent @ g - lg @ consistent @ f)
    linear = np.max(np.abs(solve_Lpsi(space, 2.5 * f + g, psi, config).values - 2.5 * lf - lg))

    # d/ds ||f + s v||^2 at s = 0 equals 2 (L f, v)
    s = 1e-5
    plus = lpsi_norm_sq(space, f + s * v, psi, config)
    minus = lpsi_norm_sq(space, f - s * v, psi, config)
    derivative = (plus - minus) / (2 * s)
    identity = abs(derivative - 2 * lf @ consistent @ v) / max(1.0, abs(derivative))
    return [
        _result("lpsi", "residual", residual, 1e-11),
        _result("lpsi", "symmetry", symmetry, 1e-11),
        _result("lpsi", "linearity", linear, 1e-11),
        _result("lpsi", "directional_derivative", identity, 1e-6),
    ]


def check_limiter(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for k in (1, 2, 3):
        mesh = build_mesh(Domain((0.0, 0.0), (1.0, 1.0)), 4)
        space = FunctionSpace.build(mesh, k, "cell-local")
        values = rng.uniform(-0.5, 1.0, space.n_dofs)
        cells = space.gather(values)
        # shift every cell to a positive average
        cells += np.maximum(0.0, 0.1 - cells @ space.cell_weights / mesh.cell_measure)[:, None]
        values[space.layout.cell_dofs] = cells
        c = space.field(values)
        limited = apply_limiter(c)
        drift = np.max(np.abs(cell_averages(space, limited.values) - cell_averages(space, values)))
        undershoot = max(0.0, -float(np.min(cell_minimum(space, limited.values))))
        results += [
            _result("limiter", f"mean_k{k}", drift, 1e-14),
            _result("limiter", f"min_k{k}", undershoot, 1e-12),
        ]
    return results


def check_coercivity(rng: np.random.Generator) -> list[CheckResult]:
    space = _periodic_space(2, 8)
    config = FormConfig("ddg", beta0=10.0, beta1=0.0)
    psi = space.field(rng.uniform(1.0, 1.5, space.n_dofs))
    stable = check_stability(config.beta0, config.beta1, 2, MobilityBounds.of(psi))
    operator = assemble_form(space, psi, config)
    energy = energy_norm_matrix(space, config)
    ratios = []
    for _ in range(100):
        v = rng.standard_normal(space.n_dofs)
        v -= space.lumped_weights @ v / space.mesh.domain.measure
        ratios.append((v @ (operator @ v)) / (v @ (energy @ v)))
    smallest = float(min(ratios))
    return [CheckResult("coercivity", "min_ratio", stable and smallest > 0, smallest, 0.0)]


def check_newton(rng: np.random.Generator) -> list[CheckResult]:
    alpha = fraction_to_boundary(np.array([0.1, 1.0]), np.array([-0.6, 0.5]), 0.95)
    expected = 0.95 * 0.1 / 0.6
    full = fraction_to_boundary(np.array([0.1]), np.array([0.5]), 0.95)
    return [
        _result("newton", "fraction_to_boundary", abs(alpha - expected), 1e-15),
        _result("newton", "full_step", abs(full - 1.0), 0.0),
    ]


def check_manufactured(rng: np.random.Generator) -> list[CheckResult]:
    seed = int(rng.integers(2**31))
    return [
        _result(
            "manufactured", name, verify_manufactured(PROBLEMS[name](), seed=seed), IDENTITY_TOL
        )
        for name in ("manufactured-1d", "manufactured-2d")
    ]


SUITES: dict[str, Callable[[np.random.Generator], list[CheckResult]]] = {
    "quadrature": check_quadrature,
    "gamma": check_gamma,
    "lpsi": check_lpsi,
    "limiter": check_limiter,
    "coercivity": check_coercivity,
    "newton": check_newton,
    "manufactured": check_manufactured,
}


def run_suites(names: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    for name in names or list(SUITES):
        suite_results = SUITES[name](rng)
        logger.info(
            "suite_checked",
            suite=name,
            passed=sum(r.passed for r in suite_results),
            total=len(suite_results),
        )
        results += suite_results
    return results
