"""Exception hierarchy shared across the package."""


class RagStarError(Exception):
    """Base class for all package errors."""


class ContractError(RagStarError, ValueError):
    """An argument violates an operation's precondition."""


class TreeIntegrityError(RagStarError):
    """The search tree is in an inconsistent state."""


class DegenerateGenerationError(RagStarError):
    """A model returned empty or unusable text."""


class TransportError(RagStarError):
    """A remote backend kept failing after all retries."""


class JudgeParseError(RagStarError):
    """A judge reply could not be parsed, even after a re-ask."""


class CorpusError(RagStarError, ValueError):
    """A corpus file is malformed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class IndexFormatError(RagStarError):
    """An on-disk index is missing, stale, or from another format."""


class ConfigError(RagStarError, ValueError):
    """A configuration file contains an unknown key or a bad value."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
