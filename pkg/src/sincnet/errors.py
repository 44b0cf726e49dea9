"""Exception types shared across the package."""


class SincNetError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(SincNetError, ValueError):
    """A numeric argument is outside its admissible range."""


class ShapeError(SincNetError, ValueError):
    """Array shapes do not line up for the requested operation."""


class ContractViolationError(SincNetError, RuntimeError):
    """A call sequence precondition was broken (e.g. backward before forward)."""


class UnsupportedFormatError(SincNetError, ValueError):
    """An audio or checkpoint file is not in a supported format."""


class EmptyResultError(SincNetError, ValueError):
    """An operation would produce no output (e.g. utterance shorter than a chunk)."""


class ConfigurationError(SincNetError, ValueError):
    """Inconsistent configuration, manifest or trial setup."""


class InvalidTrialSetError(SincNetError, ValueError):
    """Scores/labels cannot define an equal error rate."""


class DegenerateEmbeddingError(SincNetError, ValueError):
    """An embedding has zero norm."""


class TrainingDivergedError(SincNetError, RuntimeError):
    """The training loss became non-finite."""
