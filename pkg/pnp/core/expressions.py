"""Arithmetic expressions in x, y, t for user-defined problems.

Grammar: numbers, ``+ - * / ^`` (``**`` also accepted), parentheses, the
functions sin, cos, exp and the constants pi and e. Text is checked against
this grammar before sympy parses it; evaluation goes through ``lambdify``.
"""

import ast
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from pnp.core.errors import ExpressionError

T = sp.Symbol("t", real=True)
COORDINATES = (sp.Symbol("x", real=True), sp.Symbol("y", real=True))

_FUNCTIONS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_CONSTANTS = {"pi": sp.pi, "e": sp.E}
_OPERATORS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _check(node: ast.AST, dim: int) -> None:
    match node:
        case ast.Expression(body=body):
            _check(body, dim)
        case ast.BinOp(left=left, op=op, right=right) if isinstance(op, _OPERATORS):
            _check(left, dim)
            _check(right, dim)
        case ast.UnaryOp(op=ast.USub() | ast.UAdd(), operand=operand):
            _check(operand, dim)
        case ast.Call(func=ast.Name(id=name), args=[arg], keywords=[]) if name in _FUNCTIONS:
            _check(arg, dim)
        case ast.Constant(value=value) if type(value) in (int, float):
            pass
        case ast.Name(id=name) if name in _CONSTANTS or name == "t":
            pass
        case ast.Name(id=name) if name in ("x", "y"):
            if ("x", "y").index(name) >= dim:
                raise ExpressionError(f"{name!r} is not a coordinate of a {dim}D domain")
        case _:
            raise ExpressionError(f"unsupported syntax: {ast.unparse(node)!r}")


@dataclass(frozen=True)
class Expression:
    """A parsed expression, callable as ``f(t, x)`` with x of shape (..., dim)."""

    source: str
    dim: int
    expr: sp.Expr

    @cached_property
    def _function(self) -> Callable[..., np.ndarray | float]:
        return sp.lambdify((T, *COORDINATES[: self.dim]), self.expr, modules="numpy")

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            value = self._function(float(t), *(x[..., a] for a in range(self.dim)))
        return np.broadcast_to(np.asarray(value, dtype=float), x.shape[:-1])

    def at_time(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self(t, x)

    def derivative(self, axis: int) -> "Expression":
        return Expression(self.source, self.dim, sp.diff(self.expr, COORDINATES[axis]))

    def gradient(self) -> Callable[[float, np.ndarray], np.ndarray]:
        """Symbolic spatial gradient as ``g(t, x)`` of shape (..., dim)."""
        parts = [self.derivative(a) for a in range(self.dim)]
        return lambda t, x: np.stack([p(t, x) for p in parts], axis=-1)


def compile_expression(source: str, dim: int) -> Expression:
    text = str(source).strip().replace("^", "**")
    if not text:
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
    _check(tree, dim)

    names: dict[str, object] = {"t": T, "x": COORDINATES[0], "y": COORDINATES[1]}
    names |= _FUNCTIONS | _CONSTANTS
    expr = parse_expr(text, local_dict=names, transformations=standard_transformations)
    return Expression(source=str(source), dim=dim, expr=sp.sympify(expr))
