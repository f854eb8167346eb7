"""Exception taxonomy shared by every module.

Each family maps to a stable CLI exit code (see ``cli.EXIT_CODES``) so
experiment scripts can branch on failure kind.
"""


class HandcnnError(Exception):
    """Base class for all engine errors."""


class DimensionError(HandcnnError):
    """Shapes do not chain: mismatched operands, empty axes, bad ranks."""


class UsageError(HandcnnError):
    """API misuse: wrong call order, missing caches, protocol violations."""


class DataError(HandcnnError):
    """Bad input data: malformed manifests, unreadable images, bad labels."""


class ConfigError(HandcnnError):
    """Invalid configuration values (rates, counts, profile fields)."""


class DivergenceError(HandcnnError):
    """Training or evaluation produced a non-finite value."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FormatError(HandcnnError):
    """Corrupt or mismatched binary file (checkpoint, tensor dump)."""
