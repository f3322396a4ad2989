"""Exception types shared across the package."""

from __future__ import annotations


class KgdialError(Exception):
    """Base class for all package errors."""


# --- source registry ---------------------------------------------------------


class DuplicateSource(KgdialError):
    pass


class UnknownDependency(KgdialError):
    pass


class CycleDetected(KgdialError):
    pass


class UnknownSource(KgdialError):
    pass


# --- corpus ------------------------------------------------------------------


class ParseError(KgdialError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(KgdialError):
    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}: field '{field}': {message}")
        self.line = line
        self.field = field


class InvariantViolation(KgdialError):
    def __init__(self, dialogue_id: str, detail: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}dialogue '{dialogue_id}': {detail}")
        self.dialogue_id = dialogue_id
        self.detail = detail
        self.line = line


class EmptyCorpus(KgdialError):
    pass


class UnknownAttribute(KgdialError):
    pass


# --- retrieval ---------------------------------------------------------------


class EmptyCollection(KgdialError):
    pass


class DuplicateKey(KgdialError):
    pass


class DimensionMismatch(KgdialError):
    pass


class ProviderFailure(KgdialError):
    pass


class PlanOrderInvalid(KgdialError):
    pass


class SourceEmpty(KgdialError):
    pass


# --- planner / assembler -----------------------------------------------------


class MissingDescription(KgdialError):
    pass


class PreconditionError(KgdialError):
    pass


class EvidenceWithoutSource(KgdialError):
    pass


class EmptyResponse(KgdialError):
    pass


# --- backends ----------------------------------------------------------------


class BackendError(KgdialError):
    pass


class Timeout(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code: int, message: str = ""):
        super().__init__(f"HTTP {code}" + (f": {message}" if message else ""))
        self.code = code


class ReplayMiss(BackendError):
    pass


class JudgeFailure(KgdialError):
    pass


# --- metrics -----------------------------------------------------------------


class NoEligibleSamples(KgdialError):
    def __init__(self, source: str):
        super().__init__(f"no sample's gold decision includes source '{source}'")
        self.source = source


class EmptyCandidateWarning(UserWarning):
    """A text metric saw an empty candidate; the score was forced to 0."""


class EmptyCandidateWarning(UserWarning):
    """Emitted when a text metric is asked to score an empty candidate."""
