"""Exception hierarchy shared by every module."""


class FairDcovError(Exception):
    """Base class for library errors."""


class InvalidSample(FairDcovError, ValueError):
    pass


class SampleTooSmall(FairDcovError, ValueError):
    pass


class ShapeMismatch(FairDcovError, ValueError):
    pass


class ArityError(FairDcovError, ValueError):
    pass


class InvalidWeight(FairDcovError, ValueError):
    pass


class DegenerateVariance(FairDcovError, ValueError):
    pass


class EmptyInput(FairDcovError, ValueError):
    pass


class InvalidForecast(FairDcovError, ValueError):
    pass


class CapTooSmall(FairDcovError, ValueError):
    pass


class InvalidRate(FairDcovError, ValueError):
    pass


class BatchTooSmall(FairDcovError, ValueError):
    pass


class DegenerateRegulariser(FairDcovError, ValueError):
    pass


class ConfigError(FairDcovError, ValueError):
    pass


class SchemaError(FairDcovError, ValueError):
    pass


class DivergenceDetected(FairDcovError, RuntimeError):
    """Raised when training produces a non-finite loss or gradient.

    ``checkpoint`` carries the last finite parameter vector when available.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
