"""Exception hierarchy shared across the toolkit.

Every data-level failure derives from ``StationcastError`` so the CLI can
map it to exit code 1 with a machine-readable JSON payload.  ``code`` is a
stable identifier; ``detail`` carries structured context (offsets, indices).
"""

from __future__ import annotations


class StationcastError(Exception):
    code = "Error"

    def __init__(self, message: str, **detail):
        super().__init__(message)
        self.detail = dict(detail)

    def to_json_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "detail": self.detail}


class MalformedField(StationcastError):
    code = "MalformedField"


class UnknownVariable(StationcastError):
    code = "UnknownVariable"


class BadTimestamp(StationcastError):
    code = "BadTimestamp"


class IoFailure(StationcastError):
    code = "IoFailure"


class UnsortedInput(StationcastError):
    code = "UnsortedInput"


class ClimatologyUnavailable(StationcastError):
    code = "ClimatologyUnavailable"


class SchemaMismatch(StationcastError):
    code = "SchemaMismatch"


class ValueParse(StationcastError):
    code = "ValueParse"


class EmptyTrainingSplit(StationcastError):
    code = "EmptyTrainingSplit"


class SplitTooShort(StationcastError):
    code = "SplitTooShort"


class ShapeMismatch(StationcastError):
    code = "ShapeMismatch"


class NonScalarLoss(StationcastError):
    code = "NonScalarLoss"


class GraphCycle(StationcastError):
    code = "GraphCycle"


class UnstableConfig(StationcastError):
    code = "UnstableConfig"


class InsufficientData(StationcastError):
    code = "InsufficientData"


class EmptyBucket(StationcastError):
    code = "EmptyBucket"


class NaNLoss(StationcastError):
    code = "NaNLoss"


class ConfigError(StationcastError):
    code = "ConfigError"
