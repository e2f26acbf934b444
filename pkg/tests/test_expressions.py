import numpy as np
import pytest

from pnp.core.errors import ExpressionError
from pnp.core.expressions import compile_expression

POINTS = np.array([[0.0, 0.5], [0.25, 1.0], [1.0, 2.0]])


@pytest.mark.parametrize(
    ("source", "expected"),
    [
        ("2", lambda t, x, y: 2.0 + 0 * x),
        ("x^2 + y", lambda t, x, y: x**2 + y),
        ("x**2 * -y", lambda t, x, y: -(x**2) * y),
        ("exp(-t) * sin(pi*x)", lambda t, x, y: np.exp(-t) * np.sin(np.pi * x)),
        ("cos(2*pi*y)/e", lambda t, x, y: np.cos(2 * np.pi * y) / np.e),
        ("+(x - 1)", lambda t, x, y: x - 1),
    ],
)
def test_evaluates_like_numpy(source, expected):
    f = compile_expression(source, dim=2)
    np.testing.assert_allclose(f(0.5, POINTS), expected(0.5, POINTS[:, 0], POINTS[:, 1]))


def test_result_has_point_shape():
    f = compile_expression("t", dim=1)
    values = f(3.0, np.zeros((4, 5, 1)))
    assert values.shape == (4, 5)
    assert np.all(values == 3.0)
    assert f.at_time(2.0)(np.zeros((2, 1))).tolist() == [2.0, 2.0]


@pytest.mark.parametrize(
    "source",
    [
        "__import__('os')",
        "abs(x)",
        "x.real",
        "x if t else 1",
        "[x]",
        "sin(x, y)",
        "True",
        "'x'",
        "z",
    ],
)
def test_rejects_unsupported_syntax(source):
    with pytest.raises(ExpressionError):
        compile_expression(source, dim=2)


def test_y_needs_two_dimensions():
    compile_expression("y", dim=2)
    with pytest.raises(ExpressionError, match="1D"):
        compile_expression("y", dim=1)


@pytest.mark.parametrize("source", ["", "   ", "x +", "(x"])
def test_rejects_malformed_text(source):
    with pytest.raises(ExpressionError):
        compile_expression(source, dim=1)


def test_integer_division_is_exact():
    assert compile_expression("1/2", dim=1)(0.0, np.zeros((1, 1)))[0] == 0.5


def test_symbolic_gradient():
    f = compile_expression("x^2 * sin(y) + t", dim=2)
    gradient = f.gradient()(1.0, POINTS)
    x, y = POINTS[:, 0], POINTS[:, 1]
    np.testing.assert_allclose(gradient[:, 0], 2 * x * np.sin(y))
    np.testing.assert_allclose(gradient[:, 1], x**2 * np.cos(y))
    assert compile_expression("t", dim=1).gradient()(0.0, np.zeros((3, 1))).shape == (3, 1)
