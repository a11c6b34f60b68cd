"""Closed-form expression language for Hamiltonians.

Grammar: numbers, ``+ - * / ^`` (``**`` also accepted), parentheses, the
variables ``t``, ``q1..qn``, ``p1..pn``, the constants ``pi`` and ``e``, and
the functions ``sin cos exp abs sqrt tanh log``, ``norm(p)`` (Euclidean norm
of the momentum) and ``norm2(p)`` (its square).

Expressions compile to vectorized numpy closures. :class:`Expression`
objects hold only their source text, so they pickle cleanly.
"""
from __future__ import annotations

import ast
import math
import re

import numpy as np

__all__ = ["Expression", "ExpressionError"]


class ExpressionError(ValueError):
    pass


_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "log": np.log,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VAR = re.compile(r"^([qp])([1-9][0-9]*)$")


def _compile(node, dim):
    if isinstance(node, ast.Expression):
        return _compile(node.body, dim)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        value = float(node.value)
        return lambda t, q, p: value
    if isinstance(node, ast.Name):
        name = node.id
        if name == "t":
            return lambda t, q, p: t
        if name in _CONSTS:
            value = _CONSTS[name]
            return lambda t, q, p: value
        m = _VAR.match(name)
        if m:
            i = int(m.group(2)) - 1
            if i >= dim:
                raise ExpressionError(f"variable {name!r} exceeds torus dimension {dim}")
            if m.group(1) == "q":
                return lambda t, q, p: q[..., i]
            return lambda t, q, p: p[..., i]
        raise ExpressionError(f"unknown name {name!r}")
    if isinstance(node, ast.UnaryOp):
        arg = _compile(node.operand, dim)
        if isinstance(node.op, ast.USub):
            return lambda t, q, p: -arg(t, q, p)
        if isinstance(node.op, ast.UAdd):
            return arg
        raise ExpressionError("unsupported unary operator")
    if isinstance(node, ast.BinOp):
        lhs = _compile(node.left, dim)
        rhs = _compile(node.right, dim)
        op = node.op
        if isinstance(op, ast.Add):
            return lambda t, q, p: lhs(t, q, p) + rhs(t, q, p)
        if isinstance(op, ast.Sub):
            return lambda t, q, p: lhs(t, q, p) - rhs(t, q, p)
        if isinstance(op, ast.Mult):
            return lambda t, q, p: lhs(t, q, p) * rhs(t, q, p)
        if isinstance(op, ast.Div):
            return lambda t, q, p: lhs(t, q, p) / rhs(t, q, p)
        if isinstance(op, ast.Pow):
            return lambda t, q, p: np.power(lhs(t, q, p), rhs(t, q, p))
        raise ExpressionError("unsupported binary operator")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise ExpressionError("only plain function calls are allowed")
        name = node.func.id
        if name in ("norm", "norm2"):
            if len(node.args) != 1 or not (isinstance(node.args[0], ast.Name) and node.args[0].id == "p"):
                raise ExpressionError(f"{name} takes the single argument p")
            if name == "norm":
                return lambda t, q, p: np.sqrt(np.sum(p * p, axis=-1))
            return lambda t, q, p: np.sum(p * p, axis=-1)
        if name not in _FUNCS:
            raise ExpressionError(f"unknown function {name!r}")
        if len(node.args) != 1:
            raise ExpressionError(f"{name} takes one argument")
        fn = _FUNCS[name]
        arg = _compile(node.args[0], dim)
        return lambda t, q, p: fn(arg(t, q, p))
    raise ExpressionError(f"unsupported syntax: {type(node).__name__}")


class Expression:
    """Vectorized evaluator ``(t, q, p) -> real`` for a closed-form string.

    ``q`` and ``p`` have shape ``(..., dim)``; ``t`` broadcasts against the
    leading axes.
    """

    def __init__(self, text: str, dim: int):
        if dim < 1:
            raise ExpressionError("dimension must be >= 1")
        self.text = text
        self.dim = dim
        self._fn = self._build()

    def _build(self):
        source = self.text.replace("^", "**")
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        return _compile(tree, self.dim)

    @property
    def variables(self) -> set[str]:
        tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_CONSTS) - set(_FUNCS)

    def __call__(self, t, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(q.shape[:-1], p.shape[:-1], np.shape(t))
        out = self._fn(np.asarray(t, dtype=float), q, p)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __getstate__(self):
        return {"text": self.text, "dim": self.dim}

    def __setstate__(self, state):
        self.text = state["text"]
        self.dim = state["dim"]
        self._fn = self._build()

    def __repr__(self):
        return f"Expression({self.text!r}, dim={self.dim})"
