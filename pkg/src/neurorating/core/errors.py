"""Exception hierarchy for neurorating."""


class NeuroratingError(Exception):
    """Base class for all neurorating errors."""


class ValidationError(NeuroratingError, ValueError):
    """Invalid parameters, bounds or inputs."""


class IngestionError(ValidationError):
    """A rating dataset row could not be ingested."""

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize ingestion error.

        Args:
            message: Description of the problem.
            line: 1-based line number in the source file (header is line 1).
        """
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(NeuroratingError, ArithmeticError):
    """Numerical or degenerate condition that prevents a result."""


class DegenerateResponseError(NumericalError):
    """Population response carries no spikes where a decoder needs some."""


class UndecodableResponseError(NumericalError):
    """Every candidate stimulus has zero likelihood (or posterior)."""


class DegenerateFitError(NumericalError):
    """Samples do not determine a finite estimate."""
