"""Exception types raised across the pipeline.

Every error that can end a case early maps onto one exclusion reason in
``pipeline.EXCLUSION_FOR_ERROR``; nothing here should escape a batch run.
"""

from __future__ import annotations


class CrashTraceError(Exception):
    """Base class for all pipeline errors."""


# --- report fetching / parsing ---

class NetworkError(CrashTraceError):
    """Remote endpoint unreachable or returned a transport-level failure."""


class NotFound(CrashTraceError):
    """The remote service has no document for the requested case."""


class CacheMiss(CrashTraceError):
    """Offline mode and no fixture/cache entry for the requested key."""


class MalformedDocument(CrashTraceError):
    """Report body is not well-formed markup."""


# --- map retrieval / conversion ---

class EmptyExtract(CrashTraceError):
    """No road-bearing ways in the requested extract."""


class EmptyAfterPrune(CrashTraceError):
    """Pruning removed every way."""


class OutOfExtent(CrashTraceError):
    """Point too far from the projection origin for the local-plane guard."""


class DegenerateGeometry(CrashTraceError):
    """A way has no usable extent (fewer than two distinct points)."""


class TooFewNodes(CrashTraceError):
    """Geometric validation needs at least five nodes."""


class SerializationError(CrashTraceError):
    """A document could not be serialized."""


class ParseError(CrashTraceError):
    """A persisted artifact could not be read back."""


class EmptyDirectory(CrashTraceError):
    """No case packages found where some were expected."""


# --- state estimation ---

class NoCandidates(CrashTraceError):
    """No admissible spawn region could be derived for a vehicle."""


class NoValidPlacement(CrashTraceError):
    """The deterministic estimator could not place a vehicle."""


class EndpointError(CrashTraceError):
    """The external estimation endpoint failed at the transport level."""


class UnparseableResponse(CrashTraceError):
    """The external estimator returned text that does not parse."""


class EstimationFailed(CrashTraceError):
    """All estimation attempts exhausted; carries the full attempt trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


# --- trajectory / replay ---

class UnreachableCrashPoint(CrashTraceError):
    """No geometric path connects the spawn state to the crash point."""


class ContactTooFar(CrashTraceError):
    """Contact point lies outside the inflated vehicle body."""
