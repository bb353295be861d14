"""Formula errors with stable codes (documented in docs/errors.md)."""

from __future__ import annotations


class FormulaError(Exception):
    code = "F000"

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.message = message
        self.offset = offset

    def __str__(self) -> str:
        return f"{self.code} at {self.offset}: {self.message}"


class SyntaxFormulaError(FormulaError):
    code = "F001"

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        super().__init__(message, offset)
        self.expected = expected


class UnknownReferenceError(FormulaError):
    code = "F002"


class UnknownFunctionError(FormulaError):
    code = "F003"


class ArityError(FormulaError):
    code = "F004"


class TypeMismatchError(FormulaError):
    code = "F005"


class MisplacedReferenceError(FormulaError):
    code = "F006"
