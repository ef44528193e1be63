"""Exception hierarchy shared by all solver modules."""


class VolterraError(Exception):
    """Base class for every error raised by this package."""


class InvalidPartitionError(VolterraError, ValueError):
    pass


class DomainError(VolterraError, ValueError):
    pass


class InvalidArgumentError(VolterraError, ValueError):
    pass


class ProblemDefinitionError(VolterraError):
    """A coefficient function returned a non-finite value.

    ``function`` names the offending coefficient, ``location`` carries the
    input (or ``(path, step)`` pair) where it happened.
    """

    def __init__(self, message, function=None, location=None):
        super().__init__(message)
        self.function = function
        self.location = location


class RegressionError(VolterraError):
    pass


class UnderdeterminedRegressionError(RegressionError):
    pass


class ConditioningError(RegressionError):
    pass


class PicardError(VolterraError):
    def __init__(self, message, k=None, l=None, residual=None, iterations=None):
        super().__init__(message)
        self.k = k
        self.l = l
        self.residual = residual
        self.iterations = iterations


class PicardConvergenceError(PicardError):
    """Fixed-point iteration hit ``max_iter`` without meeting the tolerance."""


class PicardDivergenceError(PicardError):
    """Fixed-point residual grew for three consecutive iterations."""


class StorageError(VolterraError):
    """Requested field was not retained by the solver."""


class MissingOracleError(VolterraError):
    pass


class InconclusiveStudyError(VolterraError):
    """Monte Carlo noise dominates the discretization signal."""
