"""Exception types shared across the package."""


class CausalqError(Exception):
    """Base class for all package errors."""


class ModelError(CausalqError):
    """Structurally malformed model (bad signature, missing/extra equations)."""


class InvalidModelError(CausalqError):
    """Operation requires a validated model but validation failed."""

    def __init__(self, report):
        self.report = report
        super().__init__("model failed validation: " + report.summary())


class BindingError(CausalqError):
    """Bad variable binding: unknown variable, out-of-range value, duplicate."""


class EvaluationError(CausalqError):
    """Type error while evaluating an equation (e.g. boolean op on non-0/1)."""


class ParseError(CausalqError):
    """Syntax or resolution error in the textual model/formula language."""

    def __init__(self, message, line=None, column=None, expected=None):
        self.message = message
        self.line = line
        self.column = column
        self.expected = tuple(expected) if expected else ()
        loc = "" if line is None else f" at {line}:{column}"
        hint = "" if not self.expected else " (expected " + ", ".join(self.expected) + ")"
        super().__init__(message + loc + hint)


class GuardExceeded(CausalqError):
    """An enumeration would exceed the configured evaluation budget."""
