"""Exception types shared across the package."""


class FeatscanError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FeatscanError, ValueError):
    """An argument violates an operation's contract (shape mismatch, bad k, ...)."""


class EmptyMaskError(FeatscanError, ValueError):
    """The mask has no positive cells, so no query can be formed."""


class DegenerateQueryError(FeatscanError, ValueError):
    """The masked query vector has zero norm; cosine similarity is undefined."""


class StoreExistsError(FeatscanError):
    """A feature store already exists at the target path."""


class ImageNotFoundError(FeatscanError, KeyError):
    """The requested image id is not present in the store."""


class CorruptionError(FeatscanError):
    """Stored bytes fail checksum or structural validation.

    Attributes:
        chunk_ordinal: index of the offending chunk when known, else None.
    """

    def __init__(self, message: str, chunk_ordinal: int | None = None):
        super().__init__(message)
        self.chunk_ordinal = chunk_ordinal


class ShardParseError(FeatscanError, ValueError):
    """An interchange shard is malformed.

    Attributes:
        byte_offset: position in the shard where parsing failed.
    """

    def __init__(self, message: str, byte_offset: int = 0):
        super().__init__(f"{message} (at byte {byte_offset})")
        self.byte_offset = byte_offset
