"""Exception hierarchy shared by every module of the package."""


class PaeeError(ValueError):
    """Base class for all errors raised by paee."""


# data ingestion
class MalformedRow(PaeeError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class NonMonotonicTime(PaeeError):
    pass


class OutOfRange(PaeeError):
    pass


class NegativeGasVolume(PaeeError):
    pass


class NegativeInput(PaeeError):
    pass


class NoOverlap(PaeeError):
    pass


class FormatError(PaeeError):
    pass


# preprocessing / sequencing
class EmptyWindow(PaeeError):
    pass


class NonIntegralBinCount(PaeeError):
    pass


class DegenerateChannel(PaeeError):
    pass


class UnknownLabel(PaeeError):
    pass


class NonPositiveInput(PaeeError):
    pass


# neural network / training
class ShapeMismatch(PaeeError):
    pass


class MissingCache(PaeeError):
    pass


class StaticBranchMissing(PaeeError):
    pass


class EmptyTrainingSet(PaeeError):
    pass


class DivergedFold(PaeeError):
    pass


# evaluation
class InsufficientSubjects(PaeeError):
    pass


class LengthMismatch(PaeeError):
    pass


class ZeroVariance(PaeeError):
    pass


class DegenerateDifferences(PaeeError):
    pass


# configuration
class InvalidConfig(PaeeError):
    pass


class ConfigError(PaeeError):
    pass
