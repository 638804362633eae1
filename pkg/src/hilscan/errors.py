"""Exception hierarchy shared across the toolkit.

Every operational failure raised by hilscan derives from HilscanError so
callers (and the CLI exit-code mapping) can catch one base class.
"""


class HilscanError(Exception):
    """Base class for all hilscan operational errors."""


# capture ---------------------------------------------------------------

class BadMagic(HilscanError):
    """First four bytes of a capture match no supported magic number."""


class TruncatedHeader(HilscanError):
    """Capture file is shorter than the 24-byte global header."""


class CorruptRecord(HilscanError):
    """A record header declares a stored length above the file snap length."""


class UnsupportedLinkType(HilscanError):
    """Capture link type cannot be decoded for the requested device-id mode."""


# profiler --------------------------------------------------------------

class ZeroDuration(HilscanError):
    """Rate computation requires a strictly positive duration."""


# inventory -------------------------------------------------------------

class FeedUnparseable(HilscanError):
    """Vulnerability feed document is not valid JSON of the expected shape."""


class BackendUnavailable(HilscanError):
    """Scan backend is missing its configuration or cannot run."""


# binvis ----------------------------------------------------------------

class BadChunkSize(HilscanError):
    """Chunk size must be a power of four so images stay square."""


class IndexOutOfRange(HilscanError):
    """Curve index lies outside [0, 4**order)."""


class WrongImageSize(HilscanError):
    """Image side length does not match what the operation expects."""


class IoFailure(HilscanError):
    """Image destination could not be written."""


# classifier ------------------------------------------------------------

class SingleClassData(HilscanError):
    """Training data must contain both normal and malicious samples."""


class NonFiniteLoss(HilscanError):
    """Training diverged; carries the last parameters with finite loss."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class DimensionMismatch(HilscanError):
    """Feature vector length does not match the model dimension."""


class SchemaMismatch(HilscanError):
    """Persisted model document has an unknown version or bad shape."""


class ProcessSpawnFailure(HilscanError):
    """External classifier process could not be started."""


# engine ----------------------------------------------------------------

class BindFailure(HilscanError):
    """Status service could not bind the requested address."""


# evalkit ---------------------------------------------------------------

class EmptyMatrix(HilscanError):
    """Metrics need at least one counted decision."""


class EmptyCorpus(HilscanError):
    """Corpus evaluation needs at least one capture file."""
