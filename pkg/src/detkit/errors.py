"""Exception hierarchy. The CLI maps each family to its own exit code."""

from __future__ import annotations


class DetkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DetkitError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(ValidationError):
    """A text record could not be parsed.

    Carries the file path, 1-based line number and offending token so the
    message can point straight at the bad input.
    """

    def __init__(self, message: str, path=None, line: int | None = None, token: str | None = None):
        self.path = path
        self.line = line
        self.token = token
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        suffix = f" (token {token!r})" if token is not None else ""
        super().__init__(f"{where}{message}{suffix}")


class DomainError(DetkitError, ValueError):
    """Argument outside the mathematical domain of a formula (e.g. log(0))."""


class UsageError(DetkitError):
    """Invalid invocation: bad mode, missing inputs, nothing to evaluate."""
