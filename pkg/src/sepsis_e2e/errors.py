"""Exception types shared across the package."""


class SepsisError(Exception):
    """Base class for all package-specific failures."""


# --- ingest ---

class HeaderMismatchError(SepsisError):
    """PSV header does not match the expected schema plus label column."""


class MalformedRowError(SepsisError):
    """PSV data line has the wrong column count or an unparsable cell."""


class BadLabelError(SepsisError):
    """Label cell is not 0 or 1."""


class EmptyInputError(SepsisError):
    """An operation that requires data received none."""


# --- pipeline / nn ---

class DimensionMismatchError(SepsisError):
    """Vector or matrix width differs from the expected feature count."""


class OutOfOrderRowError(SepsisError):
    """A streamed row arrived at or before an already-consumed hour."""


class BadDimsError(SepsisError):
    """Layer dimension list is too short or contains non-positive sizes."""


class ShapeMismatchError(SepsisError):
    """Gradient shapes do not match the network parameters."""


class NonFiniteInputError(SepsisError):
    """Logits contain NaN or infinity."""


class StaleCacheError(SepsisError):
    """Backward pass received a cache built for a different network."""


# --- model ---

class NonFiniteLossError(SepsisError):
    """Training loss became NaN or infinite."""


class EmptyGridError(SepsisError):
    """Grid search received an empty learning-rate or epoch list."""


class CorruptFileError(SepsisError):
    """Model container is truncated or structurally invalid."""


class ChecksumFailError(CorruptFileError):
    """Model container checksum does not match its contents."""


class VersionMismatchError(SepsisError):
    """Model container version or schema hash differs from expectations."""


# --- evalstats ---

class LengthMismatchError(SepsisError):
    """Paired vectors have different lengths."""


class UnknownModelError(SepsisError):
    """Requested model name is not a column of the metric table."""


class IncompleteGridError(SepsisError):
    """Metric grid has missing cells."""


class BadDomainError(SepsisError):
    """Argument outside the mathematical domain of the function."""
