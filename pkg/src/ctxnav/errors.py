"""Exception types raised across the package."""


class CtxNavError(Exception):
    """Base class for all package errors."""


class GenerationFailed(CtxNavError):
    pass


class OutOfBounds(CtxNavError):
    pass


class NoPath(CtxNavError):
    pass


class DomainError(CtxNavError, ValueError):
    pass


class EmptyScan(CtxNavError, ValueError):
    pass


class InsufficientHistory(CtxNavError):
    pass


class SingularSystem(CtxNavError):
    pass


class LengthMismatch(CtxNavError, ValueError):
    pass


class TooFewRuns(CtxNavError, ValueError):
    pass


class ParseError(CtxNavError):
    pass


class VersionMismatch(CtxNavError):
    pass


class MissingModel(CtxNavError):
    pass


class UnknownConfig(CtxNavError, KeyError):
    pass


class NoData(CtxNavError):
    pass
