"""Exception hierarchy shared by all solver modules."""


class PlhomError(Exception):
    """Base class for every error raised by the package."""


# geometry
class HoleTouchesCellBoundary(PlhomError, ValueError):
    pass


class UnsupportedDim(PlhomError, ValueError):
    pass


class NonTilingEpsilon(PlhomError, ValueError):
    pass


class MeshTooCoarse(PlhomError, ValueError):
    pass


# nonlinearity
class GrowthInfeasible(PlhomError, ValueError):
    """No finite growth constants fit the declared exponent on the sample grid."""


# discrete operators and solvers
class DimensionMismatch(PlhomError, ValueError):
    pass


class SingularRegularization(PlhomError, ValueError):
    pass


class LinearSolveFailed(PlhomError, RuntimeError):
    pass


class NewtonDiverged(PlhomError, RuntimeError):
    def __init__(self, message, report=None, step=None):
        super().__init__(message)
        self.report = report
        self.step = step


class NotLinearRegime(PlhomError, ValueError):
    pass


class ConfigMismatch(PlhomError, ValueError):
    pass


class FluxTableOutOfPrecision(PlhomError, ValueError):
    pass


class BadConfig(PlhomError, ValueError):
    """Invalid or incomplete configuration file.

    ``field`` names the offending ``section.key`` and ``line`` the line
    number in the file when it could be located.
    """

    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


# harness
class StudyAborted(PlhomError, RuntimeError):
    """A run of a sweep failed; ``epsilon`` is the failing value (None for the macro run)."""

    def __init__(self, message, epsilon=None):
        super().__init__(message)
        self.epsilon = epsilon
