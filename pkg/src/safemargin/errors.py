"""Exception hierarchy shared by every module of the package."""


class SafeMarginError(Exception):
    """Base class for all errors raised by safemargin."""


# expression layer ---------------------------------------------------------

class ExprSyntaxError(SafeMarginError, ValueError):
    """Malformed expression text.

    ``position`` is the 0-based character offset of the offending token and
    ``expected`` lists the token kinds that would have been accepted there.
    """

    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(expected)
        detail = f"{message} at offset {position}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(detail)


class UnknownVariable(SafeMarginError, ValueError):
    def __init__(self, name, position=None):
        self.name = name
        self.position = position
        where = "" if position is None else f" at offset {position}"
        super().__init__(f"unknown variable {name!r}{where}")


class DomainError(SafeMarginError, ArithmeticError):
    """Evaluation left the real domain (log/sqrt of a negative, x/0, ...)."""


# model / config -----------------------------------------------------------

class ConfigError(SafeMarginError, ValueError):
    pass


class MetricNotPD(ConfigError):
    pass


# integration --------------------------------------------------------------

class IntegrationError(SafeMarginError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


# equilibria ---------------------------------------------------------------

class EquilibriumError(SafeMarginError):
    pass


class NewtonDiverged(EquilibriumError):
    pass


class NotStable(EquilibriumError):
    pass


class NotHyperbolic(EquilibriumError):
    pass


class SingularJacobian(EquilibriumError):
    pass


# G function ---------------------------------------------------------------

class NotRecovered(SafeMarginError):
    """A point required to lie in the recovery region does not."""

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class StencilLeftRegion(SafeMarginError):
    """A finite-difference stencil point fell outside the recovery region."""

    def __init__(self, message, points=()):
        self.points = list(points)
        super().__init__(message)


# boundary algorithms ------------------------------------------------------

class AlgorithmError(SafeMarginError):
    """Non-convergence of one of the boundary algorithms.

    ``partial`` carries whatever result was assembled before the failure.
    """

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class MaxIterations(AlgorithmError):
    pass


class LineSearchFailed(AlgorithmError):
    pass


class ZeroDerivative(AlgorithmError):
    pass


class ZeroGradient(AlgorithmError):
    pass


class CorrectorFailed(AlgorithmError):
    def __init__(self, message, index, partial=None):
        self.index = index
        super().__init__(message, partial)


class SingularNewtonMatrix(AlgorithmError):
    pass


# oracle -------------------------------------------------------------------

class InvalidBracket(SafeMarginError, ValueError):
    pass


class NoBoundaryFound(SafeMarginError):
    pass
