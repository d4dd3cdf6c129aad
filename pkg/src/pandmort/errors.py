"""Exception hierarchy shared by all pandmort modules.

Exit-code mapping used by the CLI:
  ConfigError -> 2, IngestError -> 3, NumericalError -> 4.
"""


class PandmortError(Exception):
    """Base class for all package errors."""


class ConfigError(PandmortError):
    """Invalid or incomplete run configuration."""


class IngestError(PandmortError):
    """Raw input file cannot be parsed or fails coverage checks."""


class ParseError(PandmortError):
    """A serialized parameter file does not match its schema."""


class ValidationError(PandmortError):
    """A model object violates one of its declared invariants."""


class NumericalError(PandmortError):
    """An iterative solver failed to converge or produced non-finite values."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
