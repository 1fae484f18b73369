"""Exception hierarchy shared across the engine.

Every domain error derives from :class:`DagSearchError` so callers (the CLI and
the HTTP service) can separate domain failures from programming errors.
"""


class DagSearchError(Exception):
    """Base class for all domain errors."""

    @property
    def reason(self) -> str:
        return type(self).__name__


# plan


class ParseError(DagSearchError):
    pass


class MalformedNodeLine(ParseError):
    pass


class DuplicateNodeId(ParseError):
    pass


class MalformedEdge(ParseError):
    pass


class EmptyPlan(ParseError):
    pass


class CycleDetected(DagSearchError):
    pass


# template


class FormatError(DagSearchError):
    def __init__(self, message: str, tag: str | None = None):
        super().__init__(message)
        self.tag = tag


class MissingTag(FormatError):
    pass


class DuplicateTag(FormatError):
    pass


class OutOfOrder(FormatError):
    pass


class UnclosedTag(FormatError):
    pass


class PrefixNotPaused(DagSearchError):
    pass


# execution


class FetchError(DagSearchError):
    pass


class FetchTimeout(FetchError):
    pass


class HttpError(FetchError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(message or f"HTTP {status}")
        self.status = status


class AuthMissing(FetchError):
    pass


class AllBackendsFailed(FetchError):
    pass


# reward


class JudgeUnavailable(DagSearchError):
    pass


class UnparsableVerdict(DagSearchError):
    pass


class WeightSumInvalid(DagSearchError):
    pass


# grpo


class EmptyGroup(DagSearchError):
    pass


class EmptyBatch(DagSearchError):
    pass


class StepOutOfRange(DagSearchError):
    pass


class InconsistentSpans(DagSearchError):
    pass


# rollout


class PolicyUnreachable(DagSearchError):
    pass


class GenerationLimitExceeded(DagSearchError):
    pass


# databuild


class EmbeddingDimMismatch(DagSearchError):
    pass


class GeneratorUnavailable(DagSearchError):
    pass


class UnparsableGeneration(DagSearchError):
    pass


class CheckerUnavailable(DagSearchError):
    pass


# interface


class ConfigInvalid(DagSearchError):
    pass


class IoFailure(DagSearchError):
    pass


class BindFailure(DagSearchError):
    pass
