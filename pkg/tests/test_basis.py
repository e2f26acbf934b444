import numpy as np
import pytest

from pnp.core.basis import (
    FunctionSpace,
    NodalBasis,
    gauss_lobatto_rule,
    gauss_rule,
    interpolate,
)
from pnp.core.errors import BasisError, QuadratureError
from pnp.core.mesh import build_mesh
from tests.conftest import make_space, unit_interval, unit_square


def test_small_lobatto_rules():
    two, three = gauss_lobatto_rule(2), gauss_lobatto_rule(3)
    np.testing.assert_allclose(two.nodes, [-1, 1])
    np.testing.assert_allclose(two.weights, [1, 1])
    np.testing.assert_allclose(three.nodes, [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(three.weights, [1 / 3, 4 / 3, 1 / 3])
    five = gauss_lobatto_rule(5)
    np.testing.assert_allclose(five.nodes, [-1, -np.sqrt(3 / 7), 0, np.sqrt(3 / 7), 1], atol=1e-15)


@pytest.mark.parametrize("n", range(2, 9))
def test_lobatto_exact_to_degree(n):
    rule = gauss_lobatto_rule(n)
    assert rule.degree == 2 * n - 3
    for j in range(2 * n - 2):
        exact = (1 - (-1) ** (j + 1)) / (j + 1)
        assert abs(rule.weights @ rule.nodes**j - exact) < 1e-13


@pytest.mark.parametrize("n", range(1, 9))
def test_gauss_exact_to_degree(n):
    rule = gauss_rule(n)
    for j in range(2 * n):
        exact = (1 - (-1) ** (j + 1)) / (j + 1)
        assert abs(rule.weights @ rule.nodes**j - exact) < 1e-13


def test_rule_sizes_are_validated():
    with pytest.raises(QuadratureError):
        gauss_lobatto_rule(1)
    with pytest.raises(QuadratureError):
        gauss_rule(0)


def test_tensor_rule_integrates_products():
    points, weights = gauss_lobatto_rule(3).tensor(2)
    assert points.shape == (9, 2)
    assert weights.sum() == pytest.approx(4.0)
    # x^2 y^2 over [-1, 1]^2
    assert weights @ (points[:, 0] ** 2 * points[:, 1] ** 2) == pytest.approx(4 / 9)


@pytest.mark.parametrize(("k", "dim"), [(1, 1), (3, 1), (1, 2), (2, 2), (3, 2)])
def test_nodal_basis_is_lagrange(k, dim, rng):
    basis = NodalBasis(k, dim)
    assert basis.n_local == (k + 1) ** dim
    at_nodes = basis.evaluate(basis.reference_nodes)
    np.testing.assert_allclose(at_nodes.values, np.eye(basis.n_local), atol=1e-12)

    points = rng.uniform(-1, 1, (20, dim))
    table = basis.evaluate(points)
    np.testing.assert_allclose(table.values.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(table.gradients.sum(axis=1), 0.0, atol=1e-10)


def test_derivatives_of_polynomial_interpolant(rng):
    basis = NodalBasis(3, 2)
    nodes = basis.reference_nodes
    coefficients = nodes[:, 0] ** 3 * nodes[:, 1] ** 2
    points = rng.uniform(-1, 1, (10, 2))
    table = basis.evaluate(points)
    x, y = points[:, 0], points[:, 1]
    np.testing.assert_allclose(table.values @ coefficients, x**3 * y**2, atol=1e-12)
    np.testing.assert_allclose(table.gradients[..., 0] @ coefficients, 3 * x**2 * y**2, atol=1e-11)
    np.testing.assert_allclose(table.gradients[..., 1] @ coefficients, 2 * x**3 * y, atol=1e-11)
    np.testing.assert_allclose(table.second[..., 0] @ coefficients, 6 * x * y**2, atol=1e-9)


def test_face_nodes():
    basis = NodalBasis(2, 2)
    lower_x = basis.face_nodes(0, "lower")
    assert len(lower_x) == 3
    np.testing.assert_allclose(basis.reference_nodes[lower_x, 0], -1.0)
    upper_y = basis.face_nodes(1, "upper")
    np.testing.assert_allclose(basis.reference_nodes[upper_y, 1], 1.0)


def test_evaluate_outside_reference_cell():
    with pytest.raises(BasisError):
        NodalBasis(2, 1).evaluate(np.array([[1.5]]))
    with pytest.raises(BasisError):
        NodalBasis(0, 1)


@pytest.mark.parametrize(
    ("domain", "n", "k", "continuity", "n_dofs"),
    [
        (unit_interval(), 4, 2, "continuous", 9),
        (unit_interval(periodic=True), 4, 2, "continuous", 8),
        (unit_interval(), 4, 2, "cell-local", 12),
        (unit_square(), 3, 2, "continuous", 49),
        (unit_square(), 3, 2, "cell-local", 81),
    ],
)
def test_dof_counts(domain, n, k, continuity, n_dofs):
    space = FunctionSpace.build(build_mesh(domain, n), k, continuity)
    assert space.n_dofs == n_dofs
    assert space.lumped_weights.sum() == pytest.approx(domain.measure)


def test_continuous_layout_shares_vertices():
    space = make_space(unit_interval(), 3, 2, "fem")
    dofs = space.layout.cell_dofs
    assert dofs[0, -1] == dofs[1, 0]
    periodic = make_space(unit_interval(periodic=True), 3, 2, "fem")
    assert periodic.layout.cell_dofs[-1, -1] == periodic.layout.cell_dofs[0, 0]


@pytest.mark.parametrize("method", ["fem", "ddg"])
def test_interpolation_reproduces_qk(method, rng):
    space = make_space(unit_square(), 3, 2, method)
    field = interpolate(space, lambda x: x[..., 0] ** 2 * x[..., 1] - 3 * x[..., 1] ** 2)
    reference = rng.uniform(-1, 1, (7, 2))
    physical = space.mesh.to_physical(reference)
    expected = physical[..., 0] ** 2 * physical[..., 1] - 3 * physical[..., 1] ** 2
    np.testing.assert_allclose(space.evaluate_cells(field.values, reference), expected, atol=1e-12)
    gradient = space.gradient_cells(field.values, reference)
    np.testing.assert_allclose(
        gradient[..., 1], physical[..., 0] ** 2 - 6 * physical[..., 1], atol=1e-11
    )


def test_interpolation_rejects_non_finite():
    space = make_space(unit_interval(), 2, 1)
    with pytest.raises(BasisError):
        interpolate(space, lambda x: np.log(x[..., 0]))


def test_field_length_is_checked():
    space = make_space(unit_interval(), 2, 1)
    with pytest.raises(BasisError):
        space.field(np.zeros(space.n_dofs + 1))
    doubled = 2.0 * space.constant(1.5)
    assert np.all(doubled.values == 3.0)
