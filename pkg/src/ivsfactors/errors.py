"""Exception hierarchy.

The CLI maps these onto exit codes: input/domain problems exit with 2,
empty results with 3 and numerical failures with 4.
"""

from __future__ import annotations


class IvsError(Exception):
    """Base class for all package errors."""


class DomainError(IvsError, ValueError):
    """An argument lies outside the domain of the operation."""


class InputError(IvsError, ValueError):
    """Malformed or invariant-violating input data."""

    def __init__(self, message: str, lines: tuple[int, ...] = ()):
        if lines:
            where = ", ".join(str(n) for n in lines)
            message = f"{message} (line {where})" if len(lines) == 1 else f"{message} (lines {where})"
        super().__init__(message)
        self.lines = lines


class InsufficientDataError(IvsError, ValueError):
    pass


class EmptyResultError(IvsError):
    """Nothing left to analyse after filtering."""


class NumericError(IvsError, ArithmeticError):
    """A numerical procedure failed or hit a degenerate configuration."""


class DegenerateSpectrumError(NumericError):
    pass


class SelectionError(NumericError):
    pass


class SmoothingError(NumericError):
    pass
