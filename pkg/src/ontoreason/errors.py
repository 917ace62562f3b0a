class ReasonerError(Exception):
    """Base class for all errors raised by ontoreason."""


class DataError(ReasonerError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, position: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        elif position is not None:
            where = f"position {position}: "
        super().__init__(where + message)
        self.line = line
        self.position = position


class NamespaceCollisionError(DataError):
    pass


class EmptyKBError(DataError):
    pass


class SplitError(DataError):
    pass


class SamplerExhaustedError(ReasonerError):
    def __init__(self, qtype: str, requested: int, achieved: int):
        super().__init__(
            f"could not realize {requested} queries of type {qtype} "
            f"within the retry budget; achieved {achieved}"
        )
        self.qtype = qtype
        self.requested = requested
        self.achieved = achieved


class UnsupportedQueryError(ReasonerError):
    pass


class FuzzyDomainError(ValueError, ReasonerError):
    pass


class CorruptionError(ReasonerError):
    pass


class TrainingDivergedError(ReasonerError):
    pass
