"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, file and
format problems exit 2, violated internal invariants exit 3.
"""


class GivfError(Exception):
    pass


class ConfigError(GivfError):
    """Bad configuration value or unusable parameter combination."""


class VecsFormatError(GivfError, ValueError):
    """Malformed vector file; the message names the first bad byte offset."""


class StorageError(GivfError):
    """Problem with a serialized index file."""


class BadMagicError(StorageError):
    pass


class VersionError(StorageError):
    pass


class ChecksumError(StorageError):
    pass


class InvariantError(GivfError):
    """An internal self-check failed; indicates a bug, not a usage error."""
