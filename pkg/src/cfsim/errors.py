"""Exception hierarchy shared across the package.

Parsers and metric functions raise typed errors rather than crashing on bad
input; the pipeline catches per-item errors and records them in the run
manifest instead of aborting the batch.
"""

from __future__ import annotations


class CfsimError(Exception):
    """Base class for all package errors."""


class RecordValidationError(CfsimError):
    """A record or batch of records violates a data-model invariant."""


class RenderError(CfsimError):
    """A prompt template referenced a placeholder with no binding."""


class ParseError(CfsimError):
    """A model response could not be parsed into structured records.

    Carries the raw response text so failures can be audited later.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class VerdictParseError(ParseError):
    """A judge response contained neither a YES nor a NO token."""


class TransportError(CfsimError):
    """Network or HTTP failure that survived the configured retries."""


class ReplayMissError(TransportError):
    """Replay transport has no transcript entry for the request key."""

    def __init__(self, key: str):
        super().__init__(f"no transcript entry for request key {key}")
        self.key = key


class EmptyResponseError(TransportError):
    """The upstream model returned an empty completion."""


class DimensionError(CfsimError):
    """An embedding's length disagrees with earlier vectors in the run."""


class DegenerateSampleError(CfsimError):
    """A sample has zero relevant units; it is excluded, not fatal."""


class IncompleteAnnotationError(CfsimError):
    """A relevant unit is missing a verdict for the requested target."""


class EmptyReportError(CfsimError):
    """No explanation contributed to the report aggregates."""


class StageError(CfsimError):
    """Every item in a pipeline stage failed."""


class StoreError(CfsimError):
    """Persistence failure in the run store."""


class SchemaVersionError(StoreError):
    """Run on disk was written by a newer schema than this code supports."""


class LoadError(StoreError):
    """A persisted file contains a line that cannot be decoded."""

    def __init__(self, message: str, path: str = "", line_no: int = 0):
        super().__init__(message)
        self.path = path
        self.line_no = line_no


class ConfigError(CfsimError):
    """Run configuration failed validation."""
