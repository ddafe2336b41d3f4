"""Exception hierarchy shared across the package."""


class DiffAdaptError(Exception):
    """Base class for all package errors."""


class InvariantError(DiffAdaptError, ValueError):
    """A domain type was constructed with values that violate its invariants."""


class DomainError(DiffAdaptError, ValueError):
    """An operation was called outside its stated domain (bad preconditions)."""


class FormatError(DiffAdaptError, ValueError):
    """A persisted artifact (probe file, feature file, config) is malformed."""


class BackendError(DiffAdaptError, RuntimeError):
    """A completion or representation backend failed after retries."""


class FeatureLookupError(BackendError):
    """A representation provider has no feature for the requested problem."""


class ProbeTrainingError(DiffAdaptError, RuntimeError):
    """Probe training aborted (non-finite loss or inconsistent dataset)."""


class ConfigError(DiffAdaptError, ValueError):
    """CLI/config validation failed; message lists the offending keys."""
