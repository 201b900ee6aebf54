"""Exception hierarchy shared by every layer."""


class EvoTutorError(Exception):
    """Base class for all engine errors."""


class InputError(EvoTutorError, ValueError):
    """An argument is outside the operation's domain."""


class ConfigurationError(EvoTutorError, ValueError):
    """Inconsistent configuration, e.g. mismatched embedding dimensions."""


class OrderingError(EvoTutorError, ValueError):
    """A turn index or tick arrived out of order."""


class CapacityError(EvoTutorError):
    """The short-term window is full and must be consolidated first."""


class ChunkLookupError(EvoTutorError, KeyError):
    """Unknown or tombstoned knowledge chunk."""


class ProviderError(EvoTutorError):
    """A model-backed port (local or remote) failed."""


class ExtractorError(ProviderError):
    """Feature extraction failed; consolidation must keep the window."""


class CompressionRejected(EvoTutorError):
    """Summarizer output was not strictly shorter than its input."""
