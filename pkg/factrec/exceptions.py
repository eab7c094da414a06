from typing import List, Optional


class FactrecError(Exception):
    """Base class; errors that end a command carry the process exit code."""

    exit_code = 4


class ConfigError(FactrecError):
    exit_code = 1


class InputError(FactrecError):
    exit_code = 2


class CorpusCorrupt(InputError):
    pass


class IncompatibleBenchmark(InputError):
    pass


class IdJoinError(InputError):
    pass


class BackendError(FactrecError):
    exit_code = 3


class BackendUnavailable(BackendError):
    pass


class BackendHTTPError(BackendError):
    def __init__(self, status_code: int, body_excerpt: str):
        super().__init__(f"backend returned HTTP {status_code}: {body_excerpt}")
        self.status_code = status_code
        self.body_excerpt = body_excerpt


class InvariantViolation(FactrecError):
    exit_code = 4


class PreconditionError(ValueError):
    pass


class TripletRejected(ValueError):
    reason = "rejected"


class InvalidSentiment(TripletRejected):
    reason = "invalid-sentiment"


class EmptyStatement(TripletRejected):
    reason = "empty-statement"


class MultilineStatement(TripletRejected):
    reason = "multiline-statement"


class ParseFailure(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NotComposerFormat(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class ElicitationIncomplete(ValueError):
    def __init__(self, wanted: int, got: int, labels: Optional[List[str]] = None):
        super().__init__(f"wanted {wanted} distinct topics, parsed {got}")
        self.wanted = wanted
        self.got = got
        self.labels = labels or []


class UndefinedCorrelation(ValueError):
    pass
