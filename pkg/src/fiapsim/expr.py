"""Tiny arithmetic grammar for user-supplied model functions.

Allowed: numeric constants, named variables, ``+ - *``, unary minus and the
calls ``abs``, ``max``, ``min``, ``exp``. Anything else is rejected at parse
time, so config files never execute arbitrary code.
"""
from __future__ import annotations

import ast
import math
from functools import cached_property
from typing import Optional

_FUNCS = {"abs": abs, "max": max, "min": min, "exp": math.exp}
_BINOPS = (ast.Add, ast.Sub, ast.Mult)


class ExprError(ValueError):
    pass


def _check(node: ast.AST, variables: frozenset[str]) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, variables)
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExprError(f"unsupported constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in variables:
            raise ExprError(f"unknown variable {node.id!r} (allowed: {sorted(variables)})")
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExprError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left, variables)
        _check(node.right, variables)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExprError("only unary +/- allowed")
        _check(node.operand, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExprError("only abs, max, min, exp may be called")
        if node.keywords:
            raise ExprError("keyword arguments not allowed")
        n = len(node.args)
        if node.func.id in ("abs", "exp") and n != 1:
            raise ExprError(f"{node.func.id} takes one argument")
        if node.func.id in ("max", "min") and n < 2:
            raise ExprError(f"{node.func.id} takes at least two arguments")
        for a in node.args:
            _check(a, variables)
    else:
        raise ExprError(f"syntax {type(node).__name__} not allowed")


class Expr:
    """A parsed expression over a fixed set of variable names."""

    def __init__(self, source: str | float | int, variables: tuple[str, ...]):
        self.source = repr(float(source)) if isinstance(source, (int, float)) else str(source).strip()
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse {self.source!r}: {exc.msg}") from None
        _check(tree, frozenset(self.variables))
        self._tree = tree
        self._code = compile(tree, "<expr>", "eval")
        self._globals = {"__builtins__": {}, **_FUNCS}

    def __call__(self, *args: float) -> float:
        return float(eval(self._code, self._globals, dict(zip(self.variables, args))))

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and (self.source, self.variables) == (other.source, other.variables)

    def __hash__(self):
        return hash((self.source, self.variables))

    def __reduce__(self):
        return (Expr, (self.source, self.variables))

    @cached_property
    def constant(self) -> Optional[float]:
        """Value if the expression uses no variables."""
        ac = _affine(self._tree.body, None)
        return None if ac is None or ac[1] != 0.0 else ac[0]

    def affine_in(self, var: str) -> Optional[tuple[float, float]]:
        """``(a, c)`` with expr == a + c*var, or None if not affine in ``var`` alone."""
        return _affine(self._tree.body, var)

    @cached_property
    def kind(self) -> Optional[str]:
        """Recognise the aggregation shapes the compiled core supports."""
        body = self._tree.body
        if len(self.variables) != 1:
            return None
        v = self.variables[0]
        if isinstance(body, ast.Call) and isinstance(body.func, ast.Name):
            args = body.args
            if body.func.id == "abs" and _is_name(args[0], v):
                return "abs"
            if body.func.id == "max" and len(args) == 2:
                a, b = args
                if (_is_zero(a) and _is_name(b, v)) or (_is_zero(b) and _is_name(a, v)):
                    return "relu"
                # max(0, abs(x)) collapses to abs
                if (_is_zero(a) and _is_abs(b, v)) or (_is_zero(b) and _is_abs(a, v)):
                    return "abs"
        return None


def _is_name(node, v):
    return isinstance(node, ast.Name) and node.id == v


def _is_zero(node):
    return isinstance(node, ast.Constant) and node.value == 0


def _is_abs(node, v):
    return (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id == "abs" and _is_name(node.args[0], v))


def _affine(node, var):
    """Return (a, c) for a + c*var, or None."""
    if isinstance(node, ast.Constant):
        return float(node.value), 0.0
    if isinstance(node, ast.Name):
        return (0.0, 1.0) if node.id == var else None
    if isinstance(node, ast.UnaryOp):
        inner = _affine(node.operand, var)
        if inner is None:
            return None
        return (-inner[0], -inner[1]) if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        left, right = _affine(node.left, var), _affine(node.right, var)
        if left is None or right is None:
            return None
        if isinstance(node.op, ast.Add):
            return left[0] + right[0], left[1] + right[1]
        if isinstance(node.op, ast.Sub):
            return left[0] - right[0], left[1] - right[1]
        if isinstance(node.op, ast.Mult):
            if left[1] != 0.0 and right[1] != 0.0:
                return None
            return left[0] * right[0], left[0] * right[1] + left[1] * right[0]
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        args = [_affine(a, var) for a in node.args]
        if any(a is None or a[1] != 0.0 for a in args):
            return None
        vals = [a[0] for a in args]
        return float(_FUNCS[node.func.id](*vals)), 0.0
    return None
