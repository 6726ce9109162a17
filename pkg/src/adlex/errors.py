"""Exception hierarchy.

Everything raised on bad input derives from ``AdlexError`` so the CLI can map
validation failures to exit code 1 in one place.
"""


class AdlexError(Exception):
    """Base class for all validation errors raised by adlex."""


# chat parser
class MalformedTier(AdlexError):
    pass


class EmptyDocument(AdlexError):
    pass


class UnbalancedBracket(AdlexError):
    pass


# corpus
class OutOfRange(AdlexError):
    pass


class TooFewSamples(AdlexError):
    pass


class MissingMetadata(AdlexError):
    pass


class DuplicateId(AdlexError):
    pass


class InvalidTranscript(AdlexError):
    pass


# stats / analysis
class DegenerateGroup(AdlexError):
    pass


class DomainError(AdlexError):
    pass


class BothEmpty(AdlexError):
    pass


class EmptyModel(AdlexError):
    pass


class ZeroDenominator(AdlexError):
    pass


class NoFeatures(AdlexError):
    pass


class UnknownBackend(AdlexError):
    pass


# tensors and models
class ShapeMismatch(AdlexError):
    pass


class NonScalarLoss(AdlexError):
    pass


class TapeConsumed(AdlexError):
    pass


class TooShort(AdlexError):
    pass


class MissingEmbedding(AdlexError):
    pass


class InvalidSeverity(AdlexError):
    pass


class EmptySplit(AdlexError):
    pass


class SingularSystem(AdlexError):
    pass


# cli
class ConfigError(AdlexError):
    pass


class NoArtifacts(AdlexError):
    pass


class UsageError(AdlexError):
    pass
