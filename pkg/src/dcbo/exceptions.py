"""Exception hierarchy shared by all dcbo modules."""


class CBOError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(CBOError, ValueError):
    """A numeric parameter is outside its admissible range."""


class ObjectiveEvaluationError(CBOError, ValueError):
    """The objective returned a non-finite value.

    ``particle`` is the row index of the offending particle and ``replica``
    the replica index when the evaluation happened inside a batch.
    """

    def __init__(self, message, particle=None, replica=None, step=None):
        super().__init__(message)
        self.particle = particle
        self.replica = replica
        self.step = step


class MetadataError(CBOError, ValueError):
    """Objective metadata (minimizer, minimum, Hessian bound) is inconsistent."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class UsageError(CBOError, ValueError):
    """An operation was called without the data it needs."""


class PreconditionError(CBOError, ValueError):
    """A mathematical precondition of a certificate is violated."""


class ConfigError(CBOError, ValueError):
    """Invalid experiment configuration.

    ``field`` names the offending key, ``line`` the 1-based line of the
    config file when the error came from a file.
    """

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
