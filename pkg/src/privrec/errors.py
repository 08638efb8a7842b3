"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` -> 2,
``BudgetExhaustedError`` -> 3, anything raised from argument handling -> 1.
"""

from __future__ import annotations


class PrivRecError(Exception):
    """Base class for all package errors."""


class DataError(PrivRecError):
    """Input data is malformed or violates a model invariant."""


class CatalogParseError(DataError):
    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DimensionMismatchError(DataError):
    pass


class DanglingReferenceError(DataError):
    pass


class UnknownEntityError(DataError, KeyError):
    """A user or video id does not exist in the catalog."""

    def __str__(self) -> str:  # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class TrainingError(DataError):
    pass


class BudgetExhaustedError(PrivRecError):
    """Charging the privacy ledger would exceed its budget."""
