"""Exception types raised across the package."""


class BenfordError(Exception):
    """Base class for all package errors."""


class DomainError(BenfordError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class UndefinedStatisticError(BenfordError):
    """A statistic cannot be computed, typically because the sample is empty."""

    def __init__(self, message: str, n: int = 0):
        super().__init__(message)
        self.n = n


class NoCutoffError(BenfordError):
    """No growth-window cutoff can be resolved for a series."""


class ParseError(BenfordError):
    """An input file could not be parsed.

    ``row`` and ``column`` locate the offending cell when known (1-based row
    counting the header as row 1).
    """

    def __init__(self, message: str, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        full = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(full)
        self.path = path
        self.row = row
        self.column = column


class ValidationError(BenfordError):
    """Parsed values violate a record's invariants."""

    def __init__(self, message: str, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)


class IntegrityError(BenfordError):
    """A bundled fixture does not match its recorded checksum."""


class SingularityError(BenfordError):
    """A design matrix is rank deficient."""

    def __init__(self, message: str, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SampleSizeError(BenfordError):
    """Too few complete observations for the requested fit or test."""


class SeparationError(BenfordError):
    """A logistic fit diverged because the classes are (quasi-)separable."""


class DegenerateError(BenfordError):
    """The data carry no variation for the requested quantity."""
