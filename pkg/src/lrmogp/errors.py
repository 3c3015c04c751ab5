"""Exception hierarchy shared by all modules."""


class LrmogpError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(LrmogpError, ValueError):
    """A file or argument could not be parsed."""

    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class ConnectivityError(LrmogpError):
    """The graph is not connected."""

    def __init__(self, n_components):
        super().__init__(f"graph is disconnected ({n_components} components)")
        self.n_components = n_components


class DimensionError(LrmogpError, ValueError):
    """Operand shapes do not match."""


class NotPositiveDefiniteError(LrmogpError):
    """A matrix expected to be SPD failed to factorize."""


class SelectionError(LrmogpError, ValueError):
    """Invalid row/column selection or singular selection system."""


class DegeneratePartitionError(LrmogpError, ValueError):
    """A node partition cannot support the requested model."""


class UnsupportedCaseError(LrmogpError):
    """An operation was called outside the case it certifies."""


class NonContractiveError(LrmogpError):
    """A fixed-point iteration was given a non-contractive operator pair."""


class ConvergenceError(LrmogpError):
    """An iterative method hit its iteration cap.

    ``result`` holds whatever partial result the method had reached.
    """

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class BreakdownError(LrmogpError):
    """An iterative solver broke down (e.g. non-positive curvature)."""

    def __init__(self, msg, solution=None, report=None):
        super().__init__(msg)
        self.solution = solution
        self.report = report


class SizeGuardError(LrmogpError, ValueError):
    """A dense oracle was asked to handle a problem that is too large."""
