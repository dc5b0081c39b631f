"""Exception hierarchy shared by all genrec modules."""


class GenRecError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(GenRecError, ValueError):
    pass


class InvalidStateError(GenRecError):
    pass


class DuplicateItemError(GenRecError):
    def __init__(self, text: str, existing_id: str | None = None):
        self.text = text
        self.existing_id = existing_id
        msg = f"duplicate question text: {text!r}"
        if existing_id is not None:
            msg += f" (collides with {existing_id})"
        super().__init__(msg)


class ConfigError(GenRecError):
    pass


class ParseError(GenRecError):
    """A backend response did not have the expected shape. Keeps the raw payload."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ScoringError(GenRecError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class StrategyError(GenRecError):
    pass


class BackendError(GenRecError):
    pass


class BackendUnavailableError(BackendError):
    """Network failure, timeout or non-retryable HTTP status after all retries."""


class TranscriptExhaustedError(BackendError):
    pass


class TranscriptMismatchError(BackendError):
    def __init__(self, position: int, expected: str, actual: str):
        self.position = position
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"transcript entry {position}: expected prompt digest {expected}, got {actual}"
        )


class BankExhaustedError(BackendError):
    pass


class LogParseError(GenRecError):
    def __init__(self, path, line: int | None, message: str):
        self.path = path
        self.line = line
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
