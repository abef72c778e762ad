"""Exception types shared across the codec."""


class NvcError(Exception):
    """Base class for all codec errors."""


class InvalidArgumentError(NvcError, ValueError):
    """Caller violated an operation precondition (shape/range mismatch)."""


class ConfigError(NvcError):
    """Inconsistent or missing configuration (bank entries, weight/config hash)."""


class EncodeError(NvcError):
    """Entropy encoding failed (e.g. out-of-alphabet symbol)."""


class DecodeError(NvcError):
    """Bitstream cannot be decoded.

    ``position`` is the byte offset of the failure when known;
    ``chunk_index`` is the offending frame chunk when known.
    """

    def __init__(self, message, position=None, chunk_index=None):
        super().__init__(message)
        self.position = position
        self.chunk_index = chunk_index


class PlanningError(NvcError):
    """Benchmark planner could not realize the requested control factors."""
