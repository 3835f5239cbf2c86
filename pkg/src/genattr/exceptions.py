"""Exception types shared across the package.

Plain contract violations (bad lengths, unknown ids, malformed values) raise
ValueError/KeyError like any other Python library; the classes here mark
conditions a caller may plausibly want to catch on their own.
"""


class CapabilityError(RuntimeError):
    """A backend was asked for an operation its descriptor does not advertise."""


class TransportError(RuntimeError):
    """A remote backend call failed after exhausting its retry budget."""


class StaleSessionError(RuntimeError):
    """An encoding session was used after being closed or invalidated."""


class GenerationOverflowError(RuntimeError):
    """A backend exceeded its configured output-length bound."""


class DatasetSchemaError(ValueError):
    """A dataset line failed schema validation; message carries the line number."""


class TreeCapacityError(RuntimeError):
    """An answer cache refused an insertion beyond its capacity cap."""


class SamplingError(RuntimeError):
    """A backend failure during sampling, annotated with the path index."""

    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message)
        self.path_index = path_index


class ToleranceError(RuntimeError):
    """An estimator-versus-oracle check exceeded its tolerance."""
