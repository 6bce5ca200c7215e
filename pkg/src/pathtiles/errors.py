"""Exception types shared across the package."""


class PathtilesError(Exception):
    """Base class for all package-specific errors."""


# --- slide access ---

class UnsupportedFormat(PathtilesError):
    """File is not a pyramidal image or a synthetic slide package."""


class MissingMpp(PathtilesError):
    """Slide carries no pixel-spacing metadata and no override was given."""


class OutOfBounds(PathtilesError):
    """Requested region does not fit inside the slide's level-0 bounds."""


class DecodeError(PathtilesError):
    """Pixel data could not be decoded."""


# --- sampling ---

class MaxAttemptsExceeded(PathtilesError):
    """Rejection sampling exhausted its attempt budget (near-empty slide)."""

    def __init__(self, message, slide_id=None, attempts=None):
        super().__init__(message)
        self.slide_id = slide_id
        self.attempts = attempts


# --- embedding math ---

class DegenerateBatch(PathtilesError):
    """Fewer than two embeddings in the batch."""


class DuplicateRows(PathtilesError):
    """Two identical embeddings make the nearest-neighbor log diverge."""


class EmptyPatchSet(PathtilesError):
    """Token aggregation requires at least one patch token."""


class NotDivisible(PathtilesError):
    """Image size is not a whole number of patches."""


# --- metrics / evaluation ---

class EmptyInput(PathtilesError):
    """Metric called on empty label arrays."""


class ShapeMismatch(PathtilesError):
    """Prediction and truth arrays have different shapes."""


class ZeroVariance(PathtilesError):
    """A regression target column is constant."""

    def __init__(self, message, gene=None):
        super().__init__(message)
        self.gene = gene


class InsufficientClassExamples(PathtilesError):
    """A class has fewer examples than the requested shots."""

    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class DegenerateInput(PathtilesError):
    """Training data cannot support a multi-class probe."""


# --- geometry ---

class CropTooLarge(PathtilesError):
    """Center crop larger than the source image."""


# --- manifest / streaming ---

class ManifestParseError(PathtilesError):
    """Malformed manifest line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ManifestValidationError(PathtilesError):
    """Manifest entry failed validation (missing file, unopenable slide)."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ExhaustedDataset(PathtilesError):
    """Stream configured with no usable datasets."""


class ProtocolError(PathtilesError):
    """Wire protocol violation (bad frame, bad type, bad length)."""


class HandshakeError(PathtilesError):
    """Server HELLO reply missing or carrying wrong magic/version."""


class StreamClosed(PathtilesError):
    """Peer closed the connection mid-stream."""
