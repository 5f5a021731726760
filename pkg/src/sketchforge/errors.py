"""Exception types shared across the package."""


class SketchforgeError(Exception):
    """Base class for all sketchforge errors."""


class ValidationError(SketchforgeError, ValueError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(SketchforgeError, ValueError):
    """A file or byte stream does not match its declared format."""


class GcodeParseError(FormatError):
    """G-code text could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NumericAbort(SketchforgeError, ArithmeticError):
    """Optimisation hit a non-finite value and cannot continue."""
