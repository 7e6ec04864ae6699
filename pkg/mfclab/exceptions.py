"""
Error hierarchy for MFC Lab.

Library code raises these; the command-line entry point maps them to exit codes.
"""


class MfcLabError(Exception):
    """Base class for every error raised by the package."""


class InvalidMeasureError(MfcLabError, ValueError):
    """A measure or path violates its construction invariants."""


class DimensionMismatchError(MfcLabError, ValueError):
    """Two objects that must share a dimension do not."""


class GridMismatchError(MfcLabError, ValueError):
    """Two time-gridded objects do not share the same grid."""


class ModePreconditionError(MfcLabError, ValueError):
    """A transport mode was asked for on inputs it cannot handle."""


class ZeroMassError(MfcLabError, ArithmeticError):
    """The mollified state density vanishes at the evaluation point."""


class NotSpdError(MfcLabError, ValueError):
    """A matrix expected to be symmetric positive definite is not."""


class CoefficientEvaluationError(MfcLabError, RuntimeError):
    """A problem coefficient failed on a valid input."""

    def __init__(self, name, arguments, cause):
        self.name = name
        self.arguments = arguments
        self.cause = cause
        super().__init__(f"coefficient {name} failed on {arguments}: {cause}")


class NonFiniteStateError(MfcLabError, FloatingPointError):
    """A simulated state left the finite reals."""


class ConfigError(MfcLabError, ValueError):
    """An experiment configuration is malformed."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class UnknownProblemError(MfcLabError, KeyError):
    """A problem name is not registered in the catalog."""

    def __str__(self):
        return f"unknown problem: {self.args[0]}"
