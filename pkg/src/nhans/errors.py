"""Exception types shared across the toolkit."""


class NhansError(Exception):
    """Base class for all toolkit errors."""


class MalformedWavError(NhansError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedCodecError(NhansError):
    """The WAV file uses a codec other than 16-bit PCM or 32-bit float."""


class ShapeError(NhansError):
    """Operands have incompatible shapes."""


class CorpusError(NhansError):
    """A corpus directory is missing, unreadable, or empty."""


class CheckpointError(NhansError):
    """A checkpoint file is unreadable, truncated, or version-mismatched."""


class MetricError(NhansError):
    """A metric cannot be computed on the given pair (degenerate input)."""


class TaskMismatchError(NhansError):
    """A model trained for one task was invoked for another."""
