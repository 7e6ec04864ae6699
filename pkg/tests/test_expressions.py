"""
Unit tests for the expressions module.
"""

import numpy as np
import pytest

from mfclab.exceptions import ConfigError
from mfclab.expressions import coefficient, compile_expression, terminal
from mfclab.measures import DiscreteMeasure, MeasurePath, uniform_grid


@pytest.fixture
def arguments():
    x = np.array([[-1.0], [0.0], [2.0]])
    u = np.array([[0.5], [0.0], [-0.5]])
    m = DiscreteMeasure.uniform(np.hstack([x, u]))
    pi = MeasurePath(uniform_grid(1.0, 1), (DiscreteMeasure.uniform([[1.0], [3.0]]),) * 2)
    return 0.25, x, pi, m, u


def test_arithmetic_and_functions():
    evaluate = compile_expression("clip(2 * x - 1, -1, 1) + abs(-t) ** 2", "key")
    values = evaluate({"x": np.array([0.0, 0.75, 3.0]), "t": 0.5})
    np.testing.assert_array_equal(values, [-0.75, 0.75, 1.25])


def test_plain_numbers_compile():
    assert compile_expression(2, "key")({}) == 2.0
    assert compile_expression("-3.5", "key")({}) == -3.5


@pytest.mark.parametrize("text", ["x.__class__", "[x]", "x if t else u", "open('f')", "x < 1", "True"])
def test_unsupported_syntax_rejected(text):
    with pytest.raises(ConfigError) as raised:
        compile_expression(text, "problem.drift")
    assert raised.value.key == "problem.drift"


def test_unparseable_text_rejected():
    with pytest.raises(ConfigError):
        compile_expression("x +", "problem.vol")
    with pytest.raises(ConfigError):
        compile_expression(None, "problem.vol")


def test_coefficient_shapes(arguments):
    drift = coefficient("u", "problem.drift", "vector")
    vol = coefficient("1", "problem.vol", "matrix")
    running = coefficient("-u**2", "problem.running", "scalar")
    assert drift(*arguments).shape == (3, 1)
    assert vol(*arguments).shape == (3, 1, 1)
    np.testing.assert_array_equal(running(*arguments), [-0.25, 0.0, -0.25])
    assert drift.expression == "u"


def test_measure_statistics(arguments):
    drift = coefficient("xbar - x + ubar", "problem.drift", "vector")
    np.testing.assert_allclose(drift(*arguments)[:, 0], [4.0 / 3.0, 1.0 / 3.0, -5.0 / 3.0])
    stats = coefficient("pi_mean + pi_m2", "problem.running", "scalar")
    np.testing.assert_array_equal(stats(*arguments), [7.0, 7.0, 7.0])


def test_terminal_names_exclude_controls(arguments):
    _, x, pi, _, _ = arguments
    g = terminal("x * pi_mean", "problem.terminal")
    np.testing.assert_array_equal(g(x, pi), [-2.0, 0.0, 4.0])
    with pytest.raises(ConfigError):
        terminal("u", "problem.terminal")
