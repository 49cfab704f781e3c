"""Exception taxonomy.

Two families, mapped onto CLI exit codes: validation problems (bad
parameters, malformed inputs, broken graphs) exit with 1, numerical
problems (non-convergence, degeneracies, underflow) exit with 2.
"""


class WindgmmError(Exception):
    """Base class for all library errors."""


class ValidationError(WindgmmError):
    """Invalid parameters, configuration, or input data (CLI exit 1)."""


class ParameterError(ValidationError):
    """Mixture or prior parameters violate their invariants."""


class DisconnectedGraphError(ValidationError):
    """Topology is not connected; carries the connected components."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class InsufficientDataError(ValidationError):
    """Fewer observations than the operation needs."""


class CsvFormatError(ValidationError):
    """Malformed CSV input; carries file and line number."""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line


class GridMismatchError(ValidationError):
    """Two curves were compared on different grids."""


class NumericalError(WindgmmError):
    """Numerical failure during estimation (CLI exit 2)."""


class NonConvergenceError(NumericalError):
    """Iteration cap reached before the tolerance; carries the residual."""

    def __init__(self, message, residual=None, rounds=None, result=None):
        super().__init__(message)
        self.residual = residual
        self.rounds = rounds
        self.result = result


class DegeneracyError(NumericalError):
    """A data point or component became numerically degenerate."""


class InvalidPosteriorError(NumericalError):
    """Posterior-mode update is undefined for the given counts/priors."""


class OutOfSupportError(NumericalError):
    """Conditioning value has vanishing likelihood under every component."""


class InternalConsistencyError(NumericalError):
    """A guaranteed invariant (e.g. objective monotonicity) was violated."""
