"""Exception types raised across the toolkit."""


class RobustAsrError(Exception):
    """Base class for all toolkit errors."""


class EmptyAudio(RobustAsrError):
    """Raised when an operation receives a zero-length waveform."""


class AudioTooShort(RobustAsrError):
    """Raised when a waveform is shorter than one analysis frame."""


class SilentAudio(RobustAsrError):
    """Raised when a power-based operation receives an all-zero signal."""


class ShapeError(RobustAsrError):
    """Raised on incompatible tensor shapes."""


class SequenceTooShort(RobustAsrError):
    """Raised when striding annihilates a feature sequence."""


class ConfigError(RobustAsrError):
    """Raised on invalid configuration or out-of-range arguments."""


class InfeasibleTarget(RobustAsrError):
    """Raised when a CTC target cannot be aligned to the frame count."""


class EmptyReference(RobustAsrError):
    """Raised when an error-rate metric receives an empty reference."""


class ManifestError(RobustAsrError):
    """Raised on malformed dataset manifest entries."""
