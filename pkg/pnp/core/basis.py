"""Quadrature rules, tensor Q^k nodal bases at Gauss-Lobatto points, and
the discrete function spaces built from them.
"""

from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Literal

import numpy as np
from numpy.polynomial import legendre

from pnp.core.errors import BasisError, QuadratureError
from pnp.core.mesh import Mesh

Continuity = Literal["continuous", "cell-local"]

# f(x) with x of shape (..., dim) returning shape (...)
PointFunction = Callable[[np.ndarray], np.ndarray]

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITER = 100
_REFERENCE_TOL = 1e-12


@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.nodes)

    def tensor(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor-product points (n**dim, dim) and weights in C order."""
        grids = np.meshgrid(*([self.nodes] * dim), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        weights = reduce(np.multiply.outer, [self.weights] * dim).ravel()
        return points, weights


def gauss_lobatto_rule(n: int) -> QuadRule:
    """n-point Gauss-Lobatto rule on [-1, 1], exact to degree 2n-3."""
    if n < 2:
        raise QuadratureError(f"Gauss-Lobatto needs at least 2 points, got {n}")
    degree = n - 1
    # Chebyshev-Gauss-Lobatto seeds, refined by Newton on (1 - x^2) P'_{n-1}
    x = -np.cos(np.pi * np.arange(n) / degree)
    vander = np.zeros((n, n))
    for _ in range(_NEWTON_MAX_ITER):
        vander[:, 0] = 1.0
        vander[:, 1] = x
        for j in range(2, n):
            vander[:, j] = (
                (2 * j - 1) * x * vander[:, j - 1] - (j - 1) * vander[:, j - 2]
            ) / j
        x_old = x
        x = x_old - (x * vander[:, degree] - vander[:, degree - 1]) / (
            n * vander[:, degree]
        )
        if np.max(np.abs(x - x_old)) <= _NEWTON_TOL:
            break
    else:
        raise QuadratureError(f"Gauss-Lobatto nodes did not converge for n={n}")
    x[0], x[-1] = -1.0, 1.0
    # symmetrize to remove the last rounding asymmetry
    x = 0.5 * (x - x[::-1])
    weights = 2.0 / (degree * n * legendre.legval(x, [0] * degree + [1]) ** 2)
    return QuadRule(nodes=x, weights=weights, degree=2 * n - 3)


def gauss_rule(n: int) -> QuadRule:
    """n-point Gauss-Legendre rule on [-1, 1], exact to degree 2n-1."""
    if n < 1:
        raise QuadratureError(f"Gauss-Legendre needs at least 1 point, got {n}")
    nodes, weights = legendre.leggauss(n)
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadRule(nodes=nodes, weights=weights, degree=2 * n - 1)


class LagrangeBasis1D:
    """Lagrange polynomials through the given nodes, stored in Legendre form."""

    def __init__(self, nodes: np.ndarray) -> None:
        self.nodes = np.asarray(nodes, dtype=float)
        self.order = len(self.nodes) - 1
        # column j holds the Legendre coefficients of l_j
        self.coefficients = np.linalg.inv(legendre.legvander(self.nodes, self.order))

    def evaluate(self, points: np.ndarray, derivative: int = 0) -> np.ndarray:
        """Values of d^m l_j at each point, shape (n_points, order + 1)."""
        points = np.asarray(points, dtype=float)
        coefficients = (
            legendre.legder(self.coefficients, m=derivative, axis=0)
            if derivative
            else self.coefficients
        )
        vander = legendre.legvander(points, coefficients.shape[0] - 1)
        return vander @ coefficients


@dataclass(frozen=True)
class BasisValues:
    values: np.ndarray  # (n_points, n_local)
    gradients: np.ndarray  # (n_points, n_local, dim)
    second: np.ndarray  # pure second derivatives, (n_points, n_local, dim)


class NodalBasis:
    """Tensor Q^k Lagrange basis at the (k+1)^dim Gauss-Lobatto points.

    Local nodes are ordered in C order over their per-axis indices.
    """

    def __init__(self, order: int, dim: int) -> None:
        if order < 1:
            raise BasisError(f"polynomial order must be >= 1, got {order}")
        if dim not in (1, 2):
            raise BasisError(f"only 1D and 2D bases are supported, got {dim}")
        self.order = order
        self.dim = dim
        self.rule = gauss_lobatto_rule(order + 1)
        self.line = LagrangeBasis1D(self.rule.nodes)
        # D[i, j] = l_j'(g_i), D2[i, j] = l_j''(g_i)
        self.differentiation = self.line.evaluate(self.rule.nodes, 1)
        self.second_differentiation = self.line.evaluate(self.rule.nodes, 2)

    @property
    def n_local(self) -> int:
        return (self.order + 1) ** self.dim

    @property
    def nodes(self) -> np.ndarray:
        return self.rule.nodes

    @cached_property
    def reference_nodes(self) -> np.ndarray:
        return self.rule.tensor(self.dim)[0]

    @cached_property
    def reference_weights(self) -> np.ndarray:
        return self.rule.tensor(self.dim)[1]

    @cached_property
    def local_index(self) -> np.ndarray:
        """Per-axis node index of every local node, shape (n_local, dim)."""
        grids = np.meshgrid(*([np.arange(self.order + 1)] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def _axis_operator(self, matrix: np.ndarray, axis: int) -> np.ndarray:
        identity = np.eye(self.order + 1)
        factors = [matrix if a == axis else identity for a in range(self.dim)]
        return reduce(np.kron, factors)

    @cached_property
    def gradient_matrices(self) -> tuple[np.ndarray, ...]:
        """Reference d/dxi_a evaluated at the local nodes, one matrix per axis."""
        return tuple(
            self._axis_operator(self.differentiation, a) for a in range(self.dim)
        )

    def face_nodes(self, axis: int, side: Literal["lower", "upper"]) -> np.ndarray:
        """Local indices of the nodes on one face, ordered by tangential index."""
        target = 0 if side == "lower" else self.order
        return np.flatnonzero(self.local_index[:, axis] == target)

    def evaluate(self, points: np.ndarray) -> BasisValues:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise BasisError(f"expected reference points of dimension {self.dim}")
        if np.any(np.abs(points) > 1.0 + _REFERENCE_TOL):
            raise BasisError("reference point outside [-1, 1]^dim")
        per_axis = [
            [self.line.evaluate(points[:, a], m) for m in range(3)]
            for a in range(self.dim)
        ]

        def tensor(orders: list[int]) -> np.ndarray:
            factors = [per_axis[a][m] for a, m in enumerate(orders)]
            out = factors[0]
            for f in factors[1:]:
                out = np.einsum("pi,pj->pij", out, f).reshape(len(points), -1)
            return out

        values = tensor([0] * self.dim)
        gradients = np.stack(
            [tensor([1 if b == a else 0 for b in range(self.dim)]) for a in range(self.dim)],
            axis=-1,
        )
        second = np.stack(
            [tensor([2 if b == a else 0 for b in range(self.dim)]) for a in range(self.dim)],
            axis=-1,
        )
        return BasisValues(values=values, gradients=gradients, second=second)


def basis_eval(basis: NodalBasis, points: np.ndarray) -> BasisValues:
    return basis.evaluate(points)


@dataclass(frozen=True)
class DofLayout:
    continuity: Continuity
    cell_dofs: np.ndarray  # (n_cells, n_local) global index per local node
    n_dofs: int

    @classmethod
    def build(cls, mesh: Mesh, basis: NodalBasis, continuity: Continuity) -> "DofLayout":
        n_cells, n_local = mesh.n_cells, basis.n_local
        if continuity == "cell-local":
            dofs = np.arange(n_cells * n_local).reshape(n_cells, n_local)
            return cls(continuity, dofs, n_cells * n_local)
        if continuity != "continuous":
            raise BasisError(f"unknown continuity mode {continuity!r}")
        k = basis.order
        sizes = tuple(
            n * k if mesh.domain.is_periodic(a) else n * k + 1
            for a, n in enumerate(mesh.counts)
        )
        # global node index along each axis, wrapped on periodic axes
        per_axis = (
            mesh.cell_index[:, None, :] * k + basis.local_index[None, :, :]
        ) % np.array(sizes)
        dofs = np.ravel_multi_index(tuple(np.moveaxis(per_axis, -1, 0)), sizes)
        return cls(continuity, dofs, int(np.prod(sizes)))


@dataclass(frozen=True)
class FunctionSpace:
    """Mesh + nodal basis + DoF layout: the discrete space V_h."""

    mesh: Mesh
    basis: NodalBasis
    layout: DofLayout

    @classmethod
    def build(cls, mesh: Mesh, order: int, continuity: Continuity) -> "FunctionSpace":
        basis = NodalBasis(order, mesh.dim)
        return cls(mesh, basis, DofLayout.build(mesh, basis, continuity))

    @property
    def n_dofs(self) -> int:
        return self.layout.n_dofs

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def jacobian(self) -> float:
        return self.mesh.cell_measure / 2**self.dim

    @cached_property
    def cell_node_points(self) -> np.ndarray:
        """Physical collocation points of every cell, (n_cells, n_local, dim)."""
        return self.mesh.to_physical(self.basis.reference_nodes)

    @cached_property
    def node_points(self) -> np.ndarray:
        """Physical point of every global DoF, (n_dofs, dim)."""
        points = np.empty((self.n_dofs, self.dim))
        points[self.layout.cell_dofs.ravel()] = self.cell_node_points.reshape(
            -1, self.dim
        )
        return points

    @cached_property
    def cell_weights(self) -> np.ndarray:
        """Physical Gauss-Lobatto weights of one cell (uniform mesh)."""
        return self.basis.reference_weights * self.jacobian

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        """Global lumped mass: each DoF accumulates weight from every cell."""
        weights = np.zeros(self.n_dofs)
        np.add.at(
            weights,
            self.layout.cell_dofs.ravel(),
            np.tile(self.cell_weights, self.mesh.n_cells),
        )
        return weights

    def gather(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.layout.cell_dofs]

    def field(self, values: np.ndarray) -> "Field":
        return Field(self, np.asarray(values, dtype=float))

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.n_dofs, float(value)))

    def evaluate_cells(self, values: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Values of a field at reference points in every cell: (n_cells, q)."""
        table = self.basis.evaluate(reference).values
        return self.gather(values) @ table.T

    def gradient_cells(self, values: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Physical gradients at reference points in every cell: (n_cells, q, dim)."""
        table = self.basis.evaluate(reference).gradients
        scale = 2.0 / self.mesh.spacing
        return np.einsum("cj,qja->cqa", self.gather(values), table) * scale


@dataclass(frozen=True, eq=False)
class Field:
    """One scalar unknown: nodal values at the Gauss-Lobatto points."""

    space: FunctionSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.space.n_dofs,):
            raise BasisError(
                f"field has {self.values.shape} values, layout needs {self.space.n_dofs}"
            )

    @property
    def layout(self) -> DofLayout:
        return self.space.layout

    def cell_values(self) -> np.ndarray:
        return self.space.gather(self.values)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.space, np.asarray(values, dtype=float))

    def __add__(self, other: "Field") -> "Field":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


def interpolate(space: FunctionSpace, f: PointFunction) -> Field:
    """Gauss-Lobatto interpolation I_h: sample f at every collocation point."""
    values = np.asarray(f(space.node_points), dtype=float)
    values = np.broadcast_to(values, (space.n_dofs,)).copy()
    if not np.all(np.isfinite(values)):
        raise BasisError("interpolated function produced non-finite samples")
    return Field(space, values)
