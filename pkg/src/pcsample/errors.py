"""Exception types shared across the package.

The CLI maps these onto exit codes: validation errors exit 2, numerical
failures exit 3, I/O problems exit 4.
"""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class DegenerateInputError(ValidationError):
    """Metric input is degenerate (e.g. a constant score vector)."""


class FormatError(ValidationError):
    """A file does not conform to its format, with location info."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, non-convergence)."""


class DisconnectedGraphError(ValidationError):
    """The comparison graph splits into components with no shared pairs."""

    def __init__(self, components):
        self.components = tuple(tuple(c) for c in components)
        groups = "; ".join(str(list(c)) for c in self.components)
        super().__init__(
            f"comparison graph is disconnected into {len(self.components)} "
            f"components: {groups}"
        )


class ConvergenceError(NumericalError):
    """Solver hit its iteration cap; carries the last iterate."""

    def __init__(self, message, last_q=None, iterations=None):
        super().__init__(message)
        self.last_q = last_q
        self.iterations = iterations


class ConflictError(ValidationError):
    """A judgment was submitted out of order or twice."""
