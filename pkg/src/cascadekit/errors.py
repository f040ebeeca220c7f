"""Exception hierarchy. Every domain failure raised by this package derives
from CascadeError so the CLI can map them to exit code 1 uniformly."""

from __future__ import annotations


class CascadeError(Exception):
    """Base class for all domain errors."""


# dataset ingestion
class MalformedRecord(CascadeError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(CascadeError):
    pass


class UnknownLabel(CascadeError):
    pass


class EmptySplit(CascadeError):
    pass


class EmptyTrainSplit(CascadeError):
    pass


# probability vectors
class NonFiniteInput(CascadeError):
    pass


class InvalidDistribution(CascadeError):
    pass


# backends
class BackendUnavailable(CascadeError):
    pass


class MissingPrediction(CascadeError):
    pass


class ParseFailure(CascadeError):
    def __init__(self, message: str, raw: object = None):
        super().__init__(message)
        self.raw = raw


class AuthMissing(CascadeError):
    pass


class HttpStatusError(CascadeError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}")
        self.code = code
        self.body = body


class MissingRegionTag(CascadeError):
    pass


class SchemaError(CascadeError):
    pass


# router
class DuplicateBackend(CascadeError):
    pass


class InfeasibleBudget(CascadeError):
    pass


# augment
class InconsistentLabelSpace(CascadeError):
    pass


class ProvenanceMismatch(CascadeError):
    pass


# metrics
class TraceDatasetMismatch(CascadeError):
    pass


# simulator / config
class InvalidConfig(CascadeError):
    pass
