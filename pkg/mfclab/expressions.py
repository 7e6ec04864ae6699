"""
Inline coefficient expressions for experiment configs.

A small arithmetic grammar over the names t, x, u, xbar, ubar, pi_mean and
pi_m2 with the functions clip, sin, cos, exp, abs, sqrt and tanh. Expressions
are parsed with `ast` and evaluated node by node on numpy arrays; nothing is
passed to eval.
"""

import ast
import logging
import operator

import numpy as np

from .exceptions import ConfigError
from .problem import control_mean, state_mean

logger = logging.getLogger(__name__)

# Constants
NAMES = ("t", "x", "u", "xbar", "ubar", "pi_mean", "pi_m2")
TERMINAL_NAMES = ("x", "pi_mean", "pi_m2")
FUNCTIONS = {
    "clip": np.clip,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
}
BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _compile(node, key, allowed):
    if isinstance(node, ast.Expression):
        return _compile(node.body, key, allowed)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        if node.id not in allowed:
            raise ConfigError(key, f"unknown name '{node.id}' (allowed: {', '.join(allowed)})")
        name = node.id
        return lambda env: env[name]
    if isinstance(node, ast.BinOp) and type(node.op) in BINARY:
        op = BINARY[type(node.op)]
        left, right = _compile(node.left, key, allowed), _compile(node.right, key, allowed)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in UNARY:
        op = UNARY[type(node.op)]
        operand = _compile(node.operand, key, allowed)
        return lambda env: op(operand(env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in FUNCTIONS:
            raise ConfigError(key, f"unknown function '{node.func.id}'")
        function = FUNCTIONS[node.func.id]
        arguments = [_compile(arg, key, allowed) for arg in node.args]
        return lambda env: function(*(argument(env) for argument in arguments))
    raise ConfigError(key, f"unsupported syntax: {ast.dump(node)[:60]}")


def compile_expression(text, key, allowed=NAMES):
    """
    Compile an expression into a function of a name environment.

    Args:
        text: Expression source, or a plain number
        key: Config key reported in errors
        allowed: Names the expression may use

    Returns:
        Callable env -> value
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ConfigError(key, "expected an expression string or a number")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise ConfigError(key, f"cannot parse {text!r}: {e.msg}") from e
    return _compile(tree, key, allowed)


def _path_stats(pi):
    current = pi.measures[-1]
    return float(current.mean()[0]), float(current.weights @ current.points[:, 0] ** 2)


def _environment(t, x, pi, m, u):
    pi_mean, pi_m2 = _path_stats(pi)
    return {
        "t": t,
        "x": x[:, 0],
        "u": u[:, 0],
        "xbar": float(state_mean(m, 1)[0]),
        "ubar": float(control_mean(m, 1)[0]),
        "pi_mean": pi_mean,
        "pi_m2": pi_m2,
    }


def coefficient(text, key, shape):
    """
    Scalar-problem coefficient (t, x, pi, m, u) -> array from an expression.

    Args:
        text: Expression
        key: Config key for errors
        shape: "vector" for drift (R, 1), "matrix" for volatility (R, 1, 1),
            "scalar" for running rewards (R,)
    """
    evaluate = compile_expression(text, key)

    def function(t, x, pi, m, u):
        value = np.broadcast_to(np.asarray(evaluate(_environment(t, x, pi, m, u)), dtype=float), (x.shape[0],))
        if shape == "vector":
            return value[:, None]
        if shape == "matrix":
            return value[:, None, None]
        return value

    function.expression = text
    return function


def terminal(text, key):
    """Terminal reward g(x, pi) from an expression over x, pi_mean and pi_m2."""
    evaluate = compile_expression(text, key, TERMINAL_NAMES)

    def function(x, pi):
        pi_mean, pi_m2 = _path_stats(pi)
        env = {"x": x[:, 0], "pi_mean": pi_mean, "pi_m2": pi_m2}
        return np.broadcast_to(np.asarray(evaluate(env), dtype=float), (x.shape[0],))

    function.expression = text
    return function
