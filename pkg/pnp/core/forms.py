"""Bilinear forms a_psi / exact a_psi, their sparse assembly, and the linear
solves built on them (Poisson, L_psi).

Interior faces are oriented from the ``minus`` cell to the ``plus`` cell, so
``[w] = w_plus - w_minus`` and the DDG numerical flux is

    beta0 [w] / h_e + {d_n w} + beta1 h_e [d_n^2 w].

Volume and face integrals of ``assemble_form`` use the Gauss-Lobatto nodes
themselves; ``assemble_exact_form`` swaps in a Gauss rule exact for the
volume integrands. Dirichlet data pins the Gauss-Lobatto nodes of each Dirichlet
face to g for both methods; the test traces vanish there, so the boundary
flux terms drop out of the form.
"""

import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.polynomial import legendre
from scipy.sparse.linalg import MatrixRankWarning, spsolve
from scipy.sparse.linalg import norm as sparse_norm

from pnp.core.basis import Field, FunctionSpace, QuadRule, gauss_lobatto_rule, gauss_rule
from pnp.core.errors import (
    FormError,
    IncompatibleChargeError,
    NonPositiveMobilityError,
    SingularSystemError,
)
from pnp.core.mesh import BoundarySet, Dirichlet, Edge, Side

logger = structlog.stdlib.get_logger(__name__)

Method = Literal["fem", "ddg"]
MassKind = Literal["lumped", "consistent"]
Mobility = Field | float

COMPATIBILITY_RTOL = 1e-10

_warned_penalties: set[tuple[int, float, float]] = set()


@dataclass(frozen=True)
class FormConfig:
    method: Method = "ddg"
    beta0: float = 4.0
    beta1: float = 0.0
    # conditions of the variable this form acts on; None means all zero-flux
    boundary: BoundarySet | None = None

    def __post_init__(self) -> None:
        if self.method not in ("fem", "ddg"):
            raise FormError(f"unknown method {self.method!r}")
        if self.beta0 < 0 or self.beta1 < 0:
            raise FormError("penalty coefficients must be non-negative")
        if self.method == "fem" and self.beta1 != 0:
            raise FormError("beta1 only applies to the DDG method")

    @property
    def continuity(self) -> Literal["continuous", "cell-local"]:
        return "continuous" if self.method == "fem" else "cell-local"

    def with_boundary(self, boundary: BoundarySet | None) -> "FormConfig":
        return replace(self, boundary=boundary)

    def boundary_for(self, space: FunctionSpace) -> BoundarySet:
        boundary = self.boundary or BoundarySet.uniform(space.mesh.domain)
        boundary.validate(space.mesh.domain)
        return boundary

    def check_space(self, space: FunctionSpace) -> None:
        if space.layout.continuity != self.continuity:
            raise FormError(
                f"{self.method} needs a {self.continuity} layout, "
                f"got {space.layout.continuity}"
            )


@dataclass(frozen=True)
class MobilityBounds:
    psi0: float
    psi1: float

    def __post_init__(self) -> None:
        if not (0 < self.psi0 <= self.psi1):
            raise FormError(f"invalid mobility bounds ({self.psi0}, {self.psi1})")

    @classmethod
    def of(cls, psi: Mobility) -> "MobilityBounds":
        values = psi.values if isinstance(psi, Field) else np.array([psi])
        return cls(float(np.min(values)), float(np.max(values)))


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    augmented: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.matrix @ other

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        scale = sparse_norm(self.matrix)
        if scale == 0:
            return True
        return bool(sparse_norm(self.matrix - self.matrix.T) <= rtol * scale)

    def augment(self, weights: np.ndarray) -> "SparseOperator":
        """Border the matrix with the mean constraint w^T u = 0."""
        if self.augmented:
            return self
        column = sp.csr_matrix(np.asarray(weights)[:, None])
        matrix = sp.bmat([[self.matrix, column], [column.T, None]], format="csr")
        return SparseOperator(matrix, augmented=True)

    def dump(self, path: Path) -> None:
        """Write the matrix as coordinate text: one ``row col value`` per line."""
        coo = self.matrix.tocoo()
        with path.open("w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {float(v)!r}\n")


# -- quadrature tables --------------------------------------------------------


@dataclass(frozen=True)
class FaceTables:
    """Basis traces on one local face family, for a given face rule."""

    reference: np.ndarray  # (q, dim) reference points on the face
    weights: np.ndarray  # (q,) physical face weights
    values: np.ndarray  # (q, n_local)
    dn: np.ndarray  # physical normal derivative along +axis, (q, n_local)
    dn2: np.ndarray  # physical second normal derivative, (q, n_local)


def _tangential_rule(rule: QuadRule, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 1:
        return np.zeros((1, 0)), np.ones(1)
    return rule.tensor(dim - 1)


def face_tables(
    space: FunctionSpace, axis: int, side: Side, rule: QuadRule
) -> FaceTables:
    mesh, basis = space.mesh, space.basis
    tangential, weights = _tangential_rule(rule, mesh.dim)
    fixed = -1.0 if side == "lower" else 1.0
    reference = np.insert(tangential, axis, fixed, axis=1)
    table = basis.evaluate(reference)
    scale = 2.0 / mesh.spacing[axis]
    jacobian = float(np.prod([mesh.spacing[b] / 2 for b in range(mesh.dim) if b != axis]))
    return FaceTables(
        reference=reference,
        weights=weights * jacobian,
        values=table.values,
        dn=table.gradients[:, :, axis] * scale,
        dn2=table.second[:, :, axis] * scale**2,
    )


def exact_rule(order: int) -> QuadRule:
    """Gauss rule exact for psi grad(u).grad(v) with psi, u, v in Q^k."""
    return gauss_rule(max(order + 1, (3 * order) // 2 + 1))


def _nodal_cells(space: FunctionSpace, psi: Mobility) -> np.ndarray:
    if isinstance(psi, Field):
        if psi.space.n_dofs != space.n_dofs:
            raise FormError("mobility field lives on a different layout")
        cells = space.gather(psi.values)
    else:
        cells = np.full((space.mesh.n_cells, space.basis.n_local), float(psi))
    if np.any(cells <= 0) or not np.all(np.isfinite(cells)):
        raise NonPositiveMobilityError(
            f"mobility must be positive at every node, min={np.min(cells):.3e}"
        )
    return cells


def _scatter(
    space: FunctionSpace, dofs: np.ndarray, local: np.ndarray, n: int | None = None
) -> sp.csr_matrix:
    """Sum per-entity local matrices (e, m, m) with dof rows (e, m)."""
    n = n or space.n_dofs
    rows = np.broadcast_to(dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


# -- inner products -----------------------------------------------------------


def lumped_inner(f: Field | Callable[[np.ndarray], np.ndarray], v: Field) -> float:
    """<f, v>: collocated quadrature at the Gauss-Lobatto points."""
    space = v.space
    if isinstance(f, Field):
        if f.space.n_dofs != space.n_dofs or f.layout.continuity != v.layout.continuity:
            raise FormError("lumped inner product of fields on different layouts")
        values = f.values
    else:
        values = np.asarray(f(space.node_points), dtype=float)
    return float(np.sum(space.lumped_weights * values * v.values))


def mass_matrix(space: FunctionSpace, kind: MassKind = "lumped") -> sp.csr_matrix:
    if kind == "lumped":
        return sp.diags(space.lumped_weights, format="csr")
    rule = gauss_rule(space.order + 1)
    points, weights = rule.tensor(space.dim)
    table = space.basis.evaluate(points).values
    local = np.einsum("qi,q,qj->ij", table, weights * space.jacobian, table)
    local = np.broadcast_to(local, (space.mesh.n_cells, *local.shape))
    return _scatter(space, space.layout.cell_dofs, local)


# -- DDG flux -----------------------------------------------------------------


@dataclass(frozen=True)
class FluxTerms:
    """Trace data of one field on one edge, at the face quadrature points."""

    points: np.ndarray  # physical points (q, dim)
    weights: np.ndarray
    jump: np.ndarray
    average: np.ndarray
    normal_average: np.ndarray
    second_jump: np.ndarray
    flux: np.ndarray
    # normal derivatives of the test functions of each side, (q, n_local)
    test_dn_minus: np.ndarray | None
    test_dn_plus: np.ndarray | None


def ddg_flux_terms(
    space: FunctionSpace, edge: Edge, w: Field, config: FormConfig, t: float = 0.0
) -> FluxTerms:
    if config.method != "ddg":
        raise FormError("numerical flux is only defined for the DDG method")
    config.check_space(space)
    rule = gauss_lobatto_rule(space.order + 1)
    h_e = edge.normal_spacing
    cells = space.gather(w.values)
    upper = face_tables(space, edge.axis, "upper", rule)
    lower = face_tables(space, edge.axis, "lower", rule)

    if edge.kind == "interior":
        minus, plus = cells[edge.minus], cells[edge.plus]
        trace = (upper.values @ minus, lower.values @ plus)
        normal = (upper.dn @ minus, lower.dn @ plus)
        second = (upper.dn2 @ minus, lower.dn2 @ plus)
        points = space.mesh.to_physical(lower.reference)[edge.plus]
        jump = trace[1] - trace[0]
        normal_average = 0.5 * (normal[0] + normal[1])
        second_jump = second[1] - second[0]
        flux = config.beta0 * jump / h_e + normal_average + config.beta1 * h_e * second_jump
        return FluxTerms(
            points=points,
            weights=lower.weights,
            jump=jump,
            average=0.5 * (trace[0] + trace[1]),
            normal_average=normal_average,
            second_jump=second_jump,
            flux=flux,
            test_dn_minus=0.5 * upper.dn,
            test_dn_plus=0.5 * lower.dn,
        )

    side = edge.boundary_side
    assert side is not None
    condition = config.boundary_for(space).condition(edge.axis, side)
    cell = edge.plus if side == "lower" else edge.minus
    tables = lower if side == "lower" else upper
    values = tables.values @ cells[cell]
    dn = tables.dn @ cells[cell]
    points = space.mesh.to_physical(tables.reference)[cell]
    zeros = np.zeros_like(values)
    if isinstance(condition, Dirichlet):
        g = np.asarray(condition.value(t, points), dtype=float)
        # exterior trace g; exterior normal derivative taken from inside
        jump = values - g if side == "lower" else g - values
        flux = config.beta0 * jump / h_e + dn
        average = 0.5 * (values + g)
        normal_average = dn
    else:
        jump, flux, average, normal_average = zeros, zeros, values, dn
    return FluxTerms(
        points=points,
        weights=tables.weights,
        jump=jump,
        average=average,
        normal_average=normal_average,
        second_jump=zeros,
        flux=flux,
        test_dn_minus=tables.dn if side == "upper" else None,
        test_dn_plus=tables.dn if side == "lower" else None,
    )


# -- assembly -----------------------------------------------------------------


def _interior_face_matrices(
    space: FunctionSpace,
    psi_cells: np.ndarray,
    config: FormConfig,
    rule: QuadRule,
    beta0: float | None = None,
    beta1: float | None = None,
) -> sp.csr_matrix:
    beta0 = config.beta0 if beta0 is None else beta0
    beta1 = config.beta1 if beta1 is None else beta1
    n = space.n_dofs
    total = sp.csr_matrix((n, n))
    for family in space.mesh.interior_faces:
        if len(family.minus) == 0:
            continue
        a = family.axis
        h_e = space.mesh.spacing[a]
        upper = face_tables(space, a, "upper", rule)
        lower = face_tables(space, a, "lower", rule)
        jump = np.hstack([-upper.values, lower.values])
        normal_average = 0.5 * np.hstack([upper.dn, lower.dn])
        second_jump = np.hstack([-upper.dn2, lower.dn2])
        flux = beta0 / h_e * jump + normal_average + beta1 * h_e * second_jump
        # rows: test, columns: trial
        block = np.einsum("qi,qj->qij", jump, flux) + np.einsum(
            "qi,qj->qij", normal_average, jump
        )
        psi_bar = 0.5 * (
            psi_cells[family.minus] @ upper.values.T
            + psi_cells[family.plus] @ lower.values.T
        )
        local = np.einsum("fq,qij->fij", psi_bar * upper.weights, block)
        dofs = np.hstack(
            [space.layout.cell_dofs[family.minus], space.layout.cell_dofs[family.plus]]
        )
        total = total + _scatter(space, dofs, local)
    return total


def _lumped_volume(space: FunctionSpace, psi_cells: np.ndarray) -> sp.csr_matrix:
    scale = 2.0 / space.mesh.spacing
    weighted = psi_cells * space.cell_weights
    local = sum(
        scale[a] ** 2 * np.einsum("qi,cq,qj->cij", g, weighted, g)
        for a, g in enumerate(space.basis.gradient_matrices)
    )
    return _scatter(space, space.layout.cell_dofs, local)


def _exact_volume(
    space: FunctionSpace, psi_cells: np.ndarray, rule: QuadRule
) -> sp.csr_matrix:
    points, weights = rule.tensor(space.dim)
    table = space.basis.evaluate(points)
    gradients = table.gradients * (2.0 / space.mesh.spacing)
    psi_q = psi_cells @ table.values.T
    weighted = psi_q * weights * space.jacobian
    local = np.einsum("qia,cq,qja->cij", gradients, weighted, gradients)
    return _scatter(space, space.layout.cell_dofs, local)


def _warn_if_unstable(space: FunctionSpace, psi: Mobility, config: FormConfig) -> None:
    if config.method != "ddg":
        return
    bounds = MobilityBounds.of(psi)
    if check_stability(config.beta0, config.beta1, space.order, bounds):
        return
    key = (space.order, config.beta0, config.beta1)
    if key in _warned_penalties:
        return
    _warned_penalties.add(key)
    logger.warning(
        "unstable_penalty",
        k=space.order,
        beta0=config.beta0,
        beta1=config.beta1,
        gamma=gamma_of_beta1(space.order, config.beta1),
        psi0=bounds.psi0,
        psi1=bounds.psi1,
    )


def assemble_form(space: FunctionSpace, psi: Mobility, config: FormConfig) -> SparseOperator:
    """Matrix A with v^T A u = a_psi(u, v), collocated quadrature throughout."""
    config.check_space(space)
    psi_cells = _nodal_cells(space, psi)
    _warn_if_unstable(space, psi, config)
    matrix = _lumped_volume(space, psi_cells)
    if config.method == "ddg":
        rule = gauss_lobatto_rule(space.order + 1)
        matrix = matrix + _interior_face_matrices(space, psi_cells, config, rule)
    return SparseOperator(matrix.tocsr())


def assemble_exact_form(
    space: FunctionSpace, psi: Mobility, config: FormConfig
) -> SparseOperator:
    """Same form as ``assemble_form`` with exactly integrated volume terms.

    Face terms keep the Gauss-Lobatto face rule of the collocated form.
    """
    config.check_space(space)
    psi_cells = _nodal_cells(space, psi)
    _warn_if_unstable(space, psi, config)
    matrix = _exact_volume(space, psi_cells, exact_rule(space.order))
    if config.method == "ddg":
        rule = gauss_lobatto_rule(space.order + 1)
        matrix = matrix + _interior_face_matrices(space, psi_cells, config, rule)
    return SparseOperator(matrix.tocsr())


def energy_norm_matrix(space: FunctionSpace, config: FormConfig) -> sp.csr_matrix:
    """Gram matrix of ||v||_E^2: broken H1 seminorm plus (1/h_e) int [v]^2."""
    config.check_space(space)
    rule = exact_rule(space.order)
    ones = np.ones((space.mesh.n_cells, space.basis.n_local))
    matrix = _exact_volume(space, ones, rule)
    if config.method == "ddg":
        # pure penalty: beta0 = 1 with no consistency terms
        n = space.n_dofs
        for family in space.mesh.interior_faces:
            if len(family.minus) == 0:
                continue
            a = family.axis
            upper = face_tables(space, a, "upper", rule)
            lower = face_tables(space, a, "lower", rule)
            jump = np.hstack([-upper.values, lower.values])
            block = np.einsum("q,qi,qj->ij", upper.weights, jump, jump)
            block /= space.mesh.spacing[a]
            local = np.broadcast_to(block, (len(family.minus), *block.shape))
            dofs = np.hstack(
                [
                    space.layout.cell_dofs[family.minus],
                    space.layout.cell_dofs[family.plus],
                ]
            )
            matrix = matrix + _scatter(space, dofs, local, n)
    return matrix.tocsr()


def dirichlet_dofs(
    space: FunctionSpace, boundary: BoundarySet, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """DoFs pinned by Dirichlet faces (face Gauss-Lobatto nodes) and their values at t."""
    found: dict[int, float] = {}
    for faces in space.mesh.boundary_faces:
        condition = boundary.condition(faces.axis, faces.side)
        if not isinstance(condition, Dirichlet):
            continue
        local = space.basis.face_nodes(faces.axis, faces.side)
        dofs = np.unique(space.layout.cell_dofs[faces.cells][:, local])
        values = np.asarray(condition.value(t, space.node_points[dofs]), dtype=float)
        found.update(zip(dofs.tolist(), np.broadcast_to(values, dofs.shape).tolist()))
    dofs = np.fromiter(sorted(found), dtype=int, count=len(found))
    return dofs, np.array([found[d] for d in dofs.tolist()])


# -- linear solves ------------------------------------------------------------


def direct_solve(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            solution = spsolve(sp.csc_matrix(matrix), rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    solution = np.atleast_1d(solution)
    if not np.all(np.isfinite(solution)):
        raise SingularSystemError("sparse solve produced non-finite values")
    return solution


@dataclass(frozen=True)
class Charge:
    valence: float
    concentration: Field


@dataclass
class PoissonProblem:
    """The potential equation: epsilon^2 a(phi, w) = <sum q_i c_i + f_phi, w>."""

    space: FunctionSpace
    config: FormConfig
    epsilon: float = 1.0
    mass: MassKind = "lumped"
    operator: SparseOperator = field(init=False)
    boundary: BoundarySet = field(init=False)

    def __post_init__(self) -> None:
        self.operator = assemble_form(self.space, 1.0, self.config)
        self.boundary = self.config.boundary_for(self.space)

    @property
    def has_dirichlet(self) -> bool:
        return self.boundary.has_dirichlet

    def scaled_operator(self) -> sp.csr_matrix:
        return self.epsilon**2 * self.operator.matrix

    def pinned(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return dirichlet_dofs(self.space, self.boundary, t)


def poisson_solve(
    space: FunctionSpace,
    charges: Sequence[Charge],
    config: FormConfig,
    source: np.ndarray | None = None,
    *,
    epsilon: float = 1.0,
    t: float = 0.0,
    mass: MassKind = "lumped",
    problem: PoissonProblem | None = None,
) -> Field:
    problem = problem or PoissonProblem(space, config, epsilon, mass)
    rho = np.zeros(space.n_dofs)
    for charge in charges:
        rho += charge.valence * charge.concentration.values
    if source is not None:
        rho = rho + source
    weights = space.lumped_weights
    matrix = problem.scaled_operator()

    if not problem.has_dirichlet:
        total = float(weights @ rho)
        scale = float(weights @ np.abs(rho))
        if abs(total) > COMPATIBILITY_RTOL * scale:
            if source is None:
                raise IncompatibleChargeError(
                    f"net charge {total:.3e} is not zero with only natural boundaries"
                )
            logger.warning("charge_projected", net_charge=total)
            rho = rho - total / space.mesh.domain.measure

    load = mass_matrix(space, problem.mass) @ rho

    if not problem.has_dirichlet:
        augmented = SparseOperator(matrix).augment(weights)
        solution = direct_solve(augmented.matrix, np.append(load, 0.0))
        return Field(space, solution[:-1])

    fixed, values = problem.pinned(t)
    free = np.setdiff1d(np.arange(space.n_dofs), fixed)
    phi = np.zeros(space.n_dofs)
    phi[fixed] = values
    rhs = load[free] - matrix[free][:, fixed] @ values
    phi[free] = direct_solve(matrix[free][:, free], rhs)
    return Field(space, phi)


def solve_Lpsi(
    space: FunctionSpace,
    f: Field | np.ndarray,
    psi: Mobility,
    config: FormConfig,
    operator: SparseOperator | None = None,
) -> Field:
    """L_psi(f): the mean-zero u with a_psi(u, v) = (f - mean(f), v) for all v."""
    if config.beta1 != 0:
        raise FormError("L_psi requires a symmetric form (beta1 = 0)")
    natural = config.with_boundary(BoundarySet.uniform(space.mesh.domain))
    operator = operator or assemble_form(space, psi, natural)
    values = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
    weights = space.lumped_weights
    mean = float(weights @ values) / space.mesh.domain.measure
    load = mass_matrix(space, "consistent") @ (values - mean)
    solution = direct_solve(operator.augment(weights).matrix, np.append(load, 0.0))
    return Field(space, solution[:-1])


def lpsi_norm_sq(
    space: FunctionSpace, f: Field | np.ndarray, psi: Mobility, config: FormConfig
) -> float:
    """||f||^2_{L_psi} = (f, L_psi f)."""
    values = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
    u = solve_Lpsi(space, values, psi, config)
    return float(values @ (mass_matrix(space, "consistent") @ u.values))


# -- stability constant -------------------------------------------------------


def _trace_functional(k: int, beta1: float) -> tuple[np.ndarray, np.ndarray]:
    """Legendre coefficients of v -> v(1) - 2 beta1 v'(1) on P_{k-1}, and the Gram diagonal."""
    degrees = np.arange(k)
    eye = np.eye(k)
    values = legendre.legval(1.0, eye.T)
    slopes = np.array([legendre.legval(1.0, legendre.legder(row)) for row in eye])
    gram = 2.0 / (2 * degrees + 1)
    return values - 2.0 * beta1 * slopes, gram


def gamma_of_beta1(k: int, beta1: float) -> float:
    """Gamma(beta1) = sup over P_{k-1} of 2 (v(1) - 2 beta1 v'(1))^2 / int v^2."""
    if k < 1:
        raise FormError(f"polynomial order must be >= 1, got {k}")
    b, gram = _trace_functional(k, beta1)
    return float(2.0 * np.sum(b**2 / gram))


def gamma_sampled(
    k: int, beta1: float, samples: int = 10_000, rng: np.random.Generator | None = None
) -> float:
    """Largest Rayleigh quotient over random polynomials of P_{k-1}."""
    rng = rng or np.random.default_rng(0)
    b, gram = _trace_functional(k, beta1)
    coefficients = rng.standard_normal((samples, k))
    quotient = 2.0 * (coefficients @ b) ** 2 / (coefficients**2 @ gram)
    return float(np.max(quotient))


def check_stability(beta0: float, beta1: float, k: int, bounds: MobilityBounds) -> bool:
    return bool(bounds.psi0 * beta0 >= bounds.psi1 * gamma_of_beta1(k, beta1))


def superconvergent_beta1(k: int) -> float:
    """beta1 = 1 / (2k(k+1)), the choice behind the optimal error estimates."""
    return 1.0 / (2 * k * (k + 1))
