"""A small arithmetic language for fields given in configuration files.

Grammar: numbers, variables x1..xn, the constant pi, + - * / and ^ (or **),
parentheses, and the functions sin, cos, exp, min, max. Parsing goes through
Python's ``ast`` with a whitelist; the result is a sympy expression, so the
same input can be evaluated on a grid and differentiated exactly.
"""

from __future__ import annotations

import ast
import re

import numpy as np
import sympy

FUNCTIONS = {
    "sin": (sympy.sin, 1),
    "cos": (sympy.cos, 1),
    "exp": (sympy.exp, 1),
    "min": (sympy.Min, None),
    "max": (sympy.Max, None),
}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}
_VAR = re.compile(r"x([1-9][0-9]*)$")


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    pass


def symbols(n: int) -> tuple:
    return tuple(sympy.symbols([f"x{i + 1}" for i in range(n)], real=True))


class Expression:
    """Parsed field expression in n variables."""

    def __init__(self, text: str, n: int):
        self.text = str(text).strip()
        self.n = n
        self.vars = symbols(n)
        try:
            # ^ is exponentiation here; Python's ^ would bind looser than + and *
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionSyntaxError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self.sym = self._build(tree.body)
        self._fn = sympy.lambdify(self.vars, self.sym, "numpy")

    def _build(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return sympy.Float(node.value) if isinstance(node.value, float) else sympy.Integer(node.value)
        if isinstance(node, ast.Name):
            if node.id == "pi":
                return sympy.pi
            m = _VAR.match(node.id)
            if m and 1 <= int(m.group(1)) <= self.n:
                return self.vars[int(m.group(1)) - 1]
            raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](self._build(node.left), self._build(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = self._build(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            if name not in FUNCTIONS:
                raise ExpressionError(f"unknown function {name!r} in {self.text!r}")
            fn, arity = FUNCTIONS[name]
            args = [self._build(a) for a in node.args]
            if (arity is not None and len(args) != arity) or (arity is None and len(args) < 2):
                raise ExpressionError(f"wrong number of arguments to {name} in {self.text!r}")
            return fn(*args)
        raise ExpressionSyntaxError(f"unsupported syntax in {self.text!r}")

    def __call__(self, *coords) -> np.ndarray:
        shape = np.broadcast(*coords).shape
        return np.broadcast_to(np.asarray(self._fn(*coords), dtype=float), shape).copy()

    def derivative(self, *indices) -> "Expression":
        """Exact partial derivative; indices are 0-based variable positions."""
        out = Expression.__new__(Expression)
        out.text, out.n, out.vars = self.text, self.n, self.vars
        out.sym = sympy.diff(self.sym, *[self.vars[i] for i in indices])
        out._fn = sympy.lambdify(self.vars, out.sym, "numpy")
        return out

    def is_constant(self) -> bool:
        return not self.sym.free_symbols

    def __repr__(self):
        return f"Expression({self.text!r}, n={self.n})"


def parse_expression(text: str, n: int) -> Expression:
    return Expression(text, n)
