"""Exception types shared across the toolkit."""


class EegdgError(Exception):
    """Base class for all toolkit errors."""


class InvalidBandError(EegdgError, ValueError):
    """Frequency band is empty or outside the representable range."""


class InsufficientDataError(EegdgError, ValueError):
    """Input is too short / too small for the requested operation."""


class MalformedLogError(EegdgError, ValueError):
    """Event log violates its invariants (lengths, ordering)."""


class ConfigurationError(EegdgError, ValueError):
    """Invalid configuration (channel setup, train config, CLI config)."""


class ShapeError(EegdgError, ValueError):
    """Array dimensions do not match the expected layout."""


class TrainingDivergenceError(EegdgError, RuntimeError):
    """Non-finite values appeared during training."""


class UndefinedCorrelationError(EegdgError, ValueError):
    """Pearson correlation requested on a constant vector."""


class NotApplicableError(EegdgError, ValueError):
    """Requested analysis does not apply to this model (e.g. no feature weights)."""


class ParseError(EegdgError, ValueError):
    """A data file could not be parsed; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line
