"""Exception hierarchy.

Two roots matter to callers: ``ConfigError`` for inputs that make a quantity
undefined, and ``NumericalError`` for computations that went wrong. The CLI
maps them to exit codes 2 and 3.
"""


class MdpLpError(Exception):
    pass


class ConfigError(MdpLpError, ValueError):
    pass


class NumericalError(MdpLpError, ArithmeticError):
    pass


class NonFiniteBounds(ConfigError):
    pass


class DegenerateBox(ConfigError):
    pass


class UnsupportedDimension(ConfigError):
    pass


class InfeasibleRegularizer(ConfigError):
    pass


class PrecisionOutOfRange(ConfigError):
    pass


class PrecisionTooCoarse(ConfigError):
    pass


class NegativeDiscriminant(ConfigError):
    pass


class InconsistentDynamics(ConfigError):
    pass


class QuadratureDivergence(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class MaxIterations(NumericalError):
    """Raised with the best iterate attached as ``.solution``."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NonFiniteIterate(NumericalError):
    pass
