"""Exception taxonomy shared across the package.

Three families so front ends (and the CLI exit-code mapping) can tell an
invalid request from broken input data from a numerical breakdown.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """A request that can never succeed: inconsistent shapes, unknown
    method names, invalid rank/constraint combinations."""


class DataFormatError(RuntimeError):
    """Input bytes or files that do not follow the documented formats."""


class BadMagicError(DataFormatError):
    """The payload is not a GBTD container at all."""


class UnknownVersionError(DataFormatError):
    """A GBTD container written by a newer, unsupported format revision."""


class TruncatedPayloadError(DataFormatError):
    """A GBTD container that ends before its declared payload does."""


class NumericalError(RuntimeError):
    """A computation that started from valid inputs but lost its footing
    (non-finite objective, unsolvable saddle system, ...)."""
