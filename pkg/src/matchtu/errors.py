"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MatchingError(ValueError):
    """Base class for invalid inputs to matching computations."""


class DimensionError(MatchingError):
    pass


class NegativeMassError(MatchingError):
    pass


class ZeroCellError(MatchingError):
    """An observed category needed by a log formula has zero mass."""

    def __init__(self, cells, message=None):
        self.cells = list(cells)
        if message is None:
            shown = ", ".join(str(c) for c in self.cells[:5])
            more = "" if len(self.cells) <= 5 else f" (+{len(self.cells) - 5} more)"
            message = f"zero mass in cell(s) {shown}{more}; enable a pseudo-count to smooth"
        super().__init__(message)


class RankDeficientBasisError(MatchingError):
    pass


class SizeCapError(MatchingError):
    pass


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate is kept on ``result`` so callers can inspect it.
    """

    def __init__(self, message, result=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.result = result
        self.residual = residual
        self.iterations = iterations


class StepSizeError(ConvergenceError):
    pass


class SingularHessianError(MatchingError):
    pass


class SaturationWarning(RuntimeWarning):
    """An exponential overflowed and was saturated to +inf."""


class InputError(MatchingError):
    """A file or configuration could not be read or parsed.

    ``line`` is the 1-based line number when the problem is in a CSV file.
    """

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DuplicateCellError(MatchingError):
    pass
