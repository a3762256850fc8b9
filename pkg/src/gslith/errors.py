"""Exception hierarchy shared by all gslith modules.

Domain errors (bad input data, infeasible targets) derive from
:class:`DomainError`; the CLI maps them to exit code 2. Malformed files raise
:class:`ParseError` and map to exit code 1 together with ordinary I/O errors.
"""


class GslError(Exception):
    """Base class for every error raised by gslith."""


class DomainError(GslError):
    pass


class InvalidParameterError(DomainError, ValueError):
    pass


class InvalidGeometryError(DomainError, ValueError):
    pass


class IncompatibleGridError(DomainError, ValueError):
    pass


class TargetExceedsResistError(DomainError, ValueError):
    pass


class BadCalibrationError(DomainError):
    pass


class IncompleteCalibrationError(DomainError):
    pass


class InsufficientDataError(DomainError, ValueError):
    pass


class DegenerateDataError(DomainError, ValueError):
    pass


class DegenerateGeometryError(DomainError, ValueError):
    pass


class OutOfSupportError(DomainError, ValueError):
    pass


class NoResonanceError(DomainError):
    def __init__(self, message, trace_label=None):
        if trace_label is not None:
            message = f"{trace_label} trace: {message}"
        super().__init__(message)
        self.trace_label = trace_label


class InfeasibleTargetError(DomainError):
    """The solver hit a dose bound on cells that still miss their target.

    ``worst_cells`` is a boolean map of the blocked cells, ``dose`` and
    ``report`` hold the last iterate so callers can inspect it.
    """

    def __init__(self, message, worst_cells=None, dose=None, report=None):
        super().__init__(message)
        self.worst_cells = worst_cells
        self.dose = dose
        self.report = report


class ParseError(GslError):
    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.lineno = lineno
        self.path = path


class UnderResolvedKernelWarning(UserWarning):
    """Grid pitch exceeds the narrowest PSF sigma; the forward term is lumped into one cell."""
