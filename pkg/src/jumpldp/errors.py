"""Exception hierarchy. The CLI maps validation errors to exit code 2 and
numeric failures to exit code 3."""

from __future__ import annotations


class JumpLDPError(Exception):
    pass


class ValidationError(JumpLDPError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int = 1, column: int = 1, where: str = ""):
        self.line = line
        self.column = column
        self.where = where
        self.reason = message
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}line {line}, column {column}: {message}")


class NumericError(JumpLDPError, ArithmeticError):
    pass


class DomainError(NumericError):
    """Rate expression evaluated outside its domain (NaN, infinite or negative)."""


class JumpCapExceeded(NumericError):
    pass


class BlowUpError(NumericError):
    pass
