"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class IssueLocError(Exception):
    exit_code = 4


class ConfigError(IssueLocError):
    exit_code = 2


class DataError(IssueLocError):
    exit_code = 3


class RepoNotFound(DataError):
    pass


class RefNotFound(DataError):
    pass


class UnsupportedMerge(DataError):
    pass


class GitObjectMissing(DataError):
    pass


class NotAMerge(IssueLocError, ValueError):
    pass


class UnsupportedVariant(ConfigError):
    pass


class SchemaError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCorpus(DataError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class DecompositionFailure(IssueLocError):
    pass


class PositivesNotRanked(DataError, ValueError):
    pass


class DegenerateInput(DataError, ValueError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class InsufficientGroups(DataError, ValueError):
    pass
