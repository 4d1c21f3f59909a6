"""Exception hierarchy shared by every vasekit module."""

from __future__ import annotations


class VasekitError(Exception):
    """Base class for all errors raised by vasekit."""


class ParseError(VasekitError, ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaError(VasekitError, ValueError):
    def __init__(self, message: str, entry: str | None = None):
        self.entry = entry
        prefix = f"entry {entry!r}: " if entry is not None else ""
        super().__init__(prefix + message)


class InvalidRatios(VasekitError, ValueError):
    pass


class EmptyManifest(VasekitError, ValueError):
    pass


class DuplicateAttribute(VasekitError, ValueError):
    pass


class DimensionMismatch(VasekitError, ValueError):
    pass


class InvalidConfig(VasekitError, ValueError):
    pass


class EmptyGroup(VasekitError, ValueError):
    pass


class MixedGroup(VasekitError, ValueError):
    pass


class ChainMismatch(VasekitError, ValueError):
    pass


class NonSquareMatrix(VasekitError, ValueError):
    pass


class UnknownVaseId(VasekitError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyRun(VasekitError, ValueError):
    pass


class ProviderError(VasekitError, RuntimeError):
    """An embedding provider could not produce vectors."""


class TransportError(ProviderError):
    """Network-level failure, or retries exhausted against the scoring service."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


class ProtocolError(ProviderError):
    """The scoring service answered with a malformed or inconsistent payload."""


class UsageError(VasekitError):
    """Bad command-line invocation or configuration (exit code 2)."""
