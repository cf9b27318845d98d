"""Exception types shared across the package."""


class FreqkdError(Exception):
    """Base class for all freqkd errors."""


class DimensionError(FreqkdError):
    """Array shape or transform length does not satisfy an operation's contract."""


class SpectrumError(FreqkdError):
    """Half-spectrum violates the real-input symmetry invariant."""


class LabelError(FreqkdError):
    """Class label outside the valid range."""


class ConfigError(FreqkdError):
    """Invalid or inconsistent configuration values."""


class CheckpointError(FreqkdError):
    """Checkpoint file is malformed or does not match the expected model."""


class DataError(FreqkdError):
    """Dataset content violates a structural requirement."""


class PairingError(DataError):
    """Paired-modality inputs do not line up sample by sample."""


class ParseError(DataError):
    """Feature file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(FreqkdError):
    """Non-finite value encountered where a finite number is required."""
