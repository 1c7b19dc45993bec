"""Exception hierarchy shared by all toolkit modules."""


class HarmonyError(Exception):
    """Base class for every error raised by vharmony."""


# lexicon
class MalformedRow(HarmonyError, ValueError):
    pass


class UnknownSegmentClass(HarmonyError, ValueError):
    pass


class EmptyLexicon(HarmonyError, ValueError):
    pass


class InsufficientData(HarmonyError, ValueError):
    pass


class BadSpec(HarmonyError, ValueError):
    pass


# numerics
class DimensionMismatch(HarmonyError, ValueError):
    pass


class EmptySupport(HarmonyError, ValueError):
    pass


class TargetOffSupport(HarmonyError, ValueError):
    pass


class CacheMismatch(HarmonyError, ValueError):
    pass


class NonFiniteGradient(HarmonyError, FloatingPointError):
    pass


class NonFiniteInput(HarmonyError, FloatingPointError):
    pass


class BadEpsilon(HarmonyError, ValueError):
    pass


class SnapshotFormatError(HarmonyError, ValueError):
    pass


# plm
class UnknownSegment(HarmonyError, KeyError):
    pass


class NonFiniteLoss(HarmonyError, FloatingPointError):
    pass


# surprisal
class NonPositiveProbability(HarmonyError, ValueError):
    pass


class EmptyGroup(HarmonyError, ValueError):
    pass


class ZeroMass(HarmonyError, ValueError):
    pass


class NoPrecedingVowel(HarmonyError, ValueError):
    pass


class SchemeInventoryMismatch(HarmonyError, ValueError):
    pass


class EmptySampleList(HarmonyError, ValueError):
    pass


# stats
class TooFewSamples(HarmonyError, ValueError):
    pass


class DegenerateSample(HarmonyError, ValueError):
    pass


class AllZeroDifferences(HarmonyError, ValueError):
    pass


class LengthMismatch(HarmonyError, ValueError):
    pass


class EmptySample(HarmonyError, ValueError):
    pass


class OutOfRangeStatistic(HarmonyError, ValueError):
    pass


class ZeroRankSum(HarmonyError, ValueError):
    pass


# report
class EmptyTable(HarmonyError, ValueError):
    pass


class EmptySamples(HarmonyError, ValueError):
    pass


class IoFailure(HarmonyError, OSError):
    pass


class StageError(HarmonyError, RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class TooManySamples(HarmonyError, ValueError):
    pass
