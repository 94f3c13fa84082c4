"""Exception types shared across the package."""


class KaneError(Exception):
    """Base class for all package-specific failures."""


class ParseError(KaneError):
    """Malformed input file. Message always names the source and line."""

    def __init__(self, source: str, line: int, reason: str):
        self.source = source
        self.line = line
        self.reason = reason
        super().__init__(f"{source}:{line}: {reason}")


class ShapeError(KaneError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(KaneError):
    """Input outside an operation's mathematical domain (e.g. log of <= 0)."""


class ConfigError(KaneError):
    """Invalid or inconsistent configuration value."""


class SamplingError(KaneError):
    """Negative sampling cannot produce a valid corruption."""


class TrainingError(KaneError):
    """Training aborted (non-finite loss or gradient)."""


class IntegrityError(KaneError):
    """Corrupt or mismatched artifact (bad checksum, wrong magic, ...)."""
