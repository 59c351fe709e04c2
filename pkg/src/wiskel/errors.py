"""Exception types shared across the toolkit."""


class WiskelError(Exception):
    """Base class for all toolkit-specific errors."""


class DimensionError(WiskelError, ValueError):
    """A tensor or array has the wrong shape; the message names the offending axis."""


class ConfigError(WiskelError, ValueError):
    """Bad configuration: unknown key, unparsable value, or inconsistent settings."""


class RecordFormatError(WiskelError, ValueError):
    """Base class for CSI record wire-format violations."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class BadMagicError(RecordFormatError):
    """Record does not start with the expected magic bytes."""


class ChecksumError(RecordFormatError):
    """Record CRC does not match its payload."""


class TruncatedRecordError(RecordFormatError):
    """Byte stream ends in the middle of a record."""


class StreamCorruptionError(WiskelError, ValueError):
    """A receiver stream violated its ordering contract."""

    def __init__(self, message, receiver_id):
        super().__init__(message)
        self.receiver_id = receiver_id


class DegenerateBatchError(WiskelError, ValueError):
    """Batch statistics cannot be estimated (training-mode normalization over one element)."""


class MissingGradientError(WiskelError, RuntimeError):
    """An optimizer step was requested while some parameters have no gradient."""

    def __init__(self, names):
        super().__init__("parameters without gradients: " + ", ".join(names))
        self.names = list(names)


class TrainingDivergedError(WiskelError, RuntimeError):
    """Loss became non-finite; carries enough context to locate the blow-up."""

    def __init__(self, message, epoch, batch, param_norms):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norms = dict(param_norms)


class ModelAuditError(WiskelError, RuntimeError):
    """Model construction audit failed (shape or parameter budget mismatch)."""


class CheckpointError(WiskelError, ValueError):
    """Checkpoint file is malformed or does not match the constructed model."""


class DataError(WiskelError, ValueError):
    """Input data files are missing, malformed, or mutually inconsistent."""
