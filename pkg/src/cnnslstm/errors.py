"""Exception types shared across the package."""


class CnnsLstmError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CnnsLstmError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(CnnsLstmError, ValueError):
    """An invalid model, data or training configuration."""


class NumericError(CnnsLstmError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class StateError(CnnsLstmError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class IngestError(CnnsLstmError, ValueError):
    """A CSV file could not be parsed into a valid series table."""


class FormatError(CnnsLstmError, ValueError):
    """A checkpoint file has the wrong magic string or format version."""


class CorruptionError(CnnsLstmError, ValueError):
    """A checkpoint file is truncated or its payload is inconsistent."""


class TrainingAbort(CnnsLstmError, RuntimeError):
    """Training stopped because the loss became non-finite."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UndefinedMetric(CnnsLstmError, ValueError):
    """A metric's denominator vanishes (e.g. constant observations)."""
