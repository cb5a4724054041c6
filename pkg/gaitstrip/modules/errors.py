"""Error types raised by GaitStrip."""

from __future__ import annotations


class GaitStripError(Exception):
    """Base class for every library error."""


class ShapeMismatchError(GaitStripError):
    """Two tensors that must agree on shape do not."""


class RankMismatchError(GaitStripError):
    """A per-dimension argument does not match the tensor rank."""


class AxisError(GaitStripError):
    """An axis index is outside the tensor rank."""


class ParameterError(GaitStripError):
    """A scalar parameter is outside its valid range."""


class KernelExtentError(GaitStripError):
    """A convolution kernel has extents the operation does not accept."""


class ChannelMismatchError(GaitStripError):
    """Input channels do not match what a kernel or map expects."""


class ConfigError(GaitStripError):
    """A model, sampler or settings configuration is invalid."""


class AlreadyFusedError(GaitStripError):
    """Fusion was requested on weights that are already fused."""


class ConfigMismatchError(GaitStripError):
    """Two weight sets were built from different configurations."""


class NoValidTripletError(GaitStripError):
    """A batch holds no (anchor, positive, negative) triple."""


class SamplerError(GaitStripError):
    """The label pool cannot satisfy a P x K batch."""


class EmptyCandidateSetError(GaitStripError):
    """A probe has no gallery candidate left after view exclusion."""


class BatchItemError(GaitStripError):
    """One member of a batch failed; carries its position."""

    def __init__(self, index: int, cause: Exception) -> None:
        """Keep the failing index alongside the original error."""
        super().__init__(f"batch item {index} failed: {cause}")
        self.index = index
        self.cause = cause


class SerializationError(GaitStripError):
    """A weight or embedding file could not be read or written."""


class BadMagicError(SerializationError):
    """The file does not start with the expected magic bytes."""


class TruncatedFileError(SerializationError):
    """The file ended before a record was complete."""

    def __init__(self, record: str, detail: str = "") -> None:
        """Name the record that was cut off."""
        message = f"truncated file while reading {record!r}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.record = record


class FingerprintMismatchError(SerializationError):
    """The weight file was written for a different model configuration."""


class SequenceError(GaitStripError):
    """A silhouette sequence directory or frame is unusable."""
