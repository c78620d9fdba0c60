"""
Exception hierarchy for the assertion pipeline
"""


class PipelineError(Exception):
    """Root of every error raised by the pipeline"""


class ParseError(PipelineError, ValueError):
    """An input file is malformed or does not match its schema"""


class ValidationError(PipelineError, ValueError):
    """An input parses but violates a domain invariant"""


class VersionGapError(ValidationError):
    """Two prompt versions are not consecutive"""


class PreconditionError(PipelineError, ValueError):
    """An operation was called with inputs outside its precondition"""


class UnknownAssertionError(PipelineError, KeyError):
    """An assertion id is not present in the matrix"""


class DimensionMismatchError(PipelineError, ValueError):
    """Matrix, labels and subsumption matrix disagree on shape or ids"""


class TooLargeError(PipelineError, ValueError):
    """Exhaustive enumeration requested for too many assertions"""


class GenerationParseError(PipelineError, ValueError):
    """No parseable JSON could be extracted from a model reply"""


class EmptyCandidateSetError(PipelineError):
    """Generation produced zero valid assertion specs"""


class GatewayError(PipelineError):
    """Base class for LLM gateway failures"""


class CacheMissError(GatewayError):
    """Replay mode was asked for a request that was never recorded"""


class ProviderError(GatewayError):
    """The provider could not be reached or kept failing after retries"""


class AuthError(GatewayError):
    """Missing or rejected API key"""


class AmbiguousReplyError(GatewayError):
    """A yes/no question was answered with something else"""
