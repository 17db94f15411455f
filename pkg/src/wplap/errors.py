"""Exception hierarchy shared by all modules."""


class WplapError(Exception):
    """Base class for every error raised by this package."""


class InvalidField(WplapError):
    pass


class DegenerateWeight(InvalidField):
    pass


class SingularMatrix(WplapError):
    pass


class InvalidExponent(WplapError, ValueError):
    pass


class BoundaryViolation(WplapError, ValueError):
    """A grid function is nonzero on a boundary node."""


class NonConvergence(WplapError):
    """The inner optimizer hit its iteration cap.

    ``residual`` is the scaled first-order residual at the last iterate and
    ``step`` the time-step index when raised from the time march.
    """

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class NumericalBreakdown(WplapError):
    pass


class OutOfRange(WplapError, ValueError):
    pass


class IncompatibleTrajectories(WplapError, ValueError):
    pass


class InvalidParameters(WplapError, ValueError):
    pass


class UndefinedRatio(WplapError, ValueError):
    pass


class NotApplicable(WplapError):
    pass


class InvalidRun(WplapError):
    pass


class ParseError(WplapError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
