"""Exception types shared across the engine; the CLI maps these to exit codes."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


class DataFormatError(EngineError):
    """Malformed input data: KB files, detection fixtures, manifests, programs."""


class MissingImageError(EngineError):
    """Requested image id has no detections in the fixture."""


class TransportError(EngineError):
    """Remote service could not be reached or returned a non-success status."""


class DetectorTransportError(TransportError):
    pass


class GeneratorTransportError(TransportError):
    pass


class GeneratorError(EngineError):
    """Backend kept producing invalid programs and the fallback was disabled."""
