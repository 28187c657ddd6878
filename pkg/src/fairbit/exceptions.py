"""Exception types shared across the package."""


class FairbitError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(FairbitError):
    """Invalid model/training configuration or mismatched dimensions."""


class NumericError(FairbitError):
    """Non-finite values encountered during computation."""


class CapacityError(FairbitError):
    """A layer is too wide for exact histogram enumeration."""


class UndefinedMetricError(FairbitError):
    """A metric is undefined on the given inputs (e.g. single-class AUC)."""


class DataError(FairbitError):
    """Malformed or inconsistent dataset input."""


class TrainingDiverged(FairbitError):
    """Training hit a non-finite loss.

    Carries the last finite-loss checkpoint and the epoch log gathered so
    far, so callers can inspect or salvage the run.
    """

    def __init__(self, message, network=None, history=None):
        super().__init__(message)
        self.network = network
        self.history = history
