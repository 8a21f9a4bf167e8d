"""Exception hierarchy shared by all pftseg modules."""


class PftsegError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PftsegError):
    """A config value violates a documented constraint."""


class ValidationError(PftsegError):
    """Data violates an invariant (bad label values, malformed files, ...)."""


class UsageError(PftsegError):
    """An operation was called with arguments outside its contract."""


class InitializationError(PftsegError):
    """Weights could not be loaded into a model (shape mismatch etc.)."""


class TrainingError(PftsegError):
    """Optimization produced a non-finite loss or otherwise diverged."""
