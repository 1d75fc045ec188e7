"""Restricted arithmetic expressions for model files and CLI control profiles.

Grammar: numeric literals, named variables, unary +/-, and the binary
operators ``+ - * / ^`` (``**`` is accepted as a synonym of ``^``).
"""

from __future__ import annotations

import ast
from typing import Callable, Sequence

from .errors import ConfigError

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)


def _check(node: ast.AST, names: set[str], source: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, names, source)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _check(node.left, names, source)
        _check(node.right, names, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
        _check(node.operand, names, source)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name):
        if node.id not in names:
            raise ConfigError(f"unknown variable {node.id!r} in expression {source!r}")
    else:
        raise ConfigError(f"unsupported syntax in expression {source!r}")


def compile_expression(source: str, variables: Sequence[str]) -> Callable[..., float]:
    """Compile ``source`` into a function of the given positional variables."""
    text = str(source).replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
    _check(tree, set(variables), source)
    code = compile(tree, "<srkit-expr>", "eval")
    names = tuple(variables)

    def fn(*values):
        return eval(code, {"__builtins__": {}}, dict(zip(names, values)))

    fn.source = source
    return fn


def compile_vector(sources: Sequence[str], variables: Sequence[str]):
    """Compile a list of expressions into ``f(*vars) -> list[float]``."""
    fns = [compile_expression(s, variables) for s in sources]

    def vec(*values):
        return [float(f(*values)) for f in fns]

    return vec
