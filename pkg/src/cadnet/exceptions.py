"""Exception hierarchy shared across the package."""


class CadError(Exception):
    """Base class for all errors raised by cadnet."""


class WavFormatError(CadError, ValueError):
    """WAV file is readable but not PCM16 mono 16 kHz."""


class WavParseError(CadError, ValueError):
    """WAV file is truncated or not a RIFF/WAVE container."""


class ManifestError(CadError, ValueError):
    """Malformed manifest, label file, or feature container."""


class EmbeddingLookupError(CadError, KeyError):
    """An external embedding was requested but is not present."""

    def __str__(self):
        return Exception.__str__(self)


class EmptyEnrollmentError(CadError, ValueError):
    """Teacher enrollment produced zero windows."""


class AucUndefinedError(CadError, ValueError):
    """AUC requested for single-class labels."""


class CheckpointVersionError(CadError, ValueError):
    """Checkpoint carries an unsupported format_version."""


class NumericalError(CadError, FloatingPointError):
    """Non-finite loss or gradient encountered."""
