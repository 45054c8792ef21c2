"""Custom exceptions for the fgamtest package."""

from typing import Any, Dict, List, Optional


class FgamError(Exception):
    """Base exception for all fgamtest errors."""

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Initialize fgamtest error.

        Args:
            message: Error message
            details: Diagnostic values attached to the failure, if any
        """
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ParameterError(FgamError):
    """Raised when an argument is outside its admissible range."""

    exit_code = 2


class ShapeError(FgamError):
    """Raised when array dimensions do not agree."""

    exit_code = 2


class CapacityError(FgamError):
    """Raised when a requested design would exceed the column guard."""

    exit_code = 2


class DomainError(FgamError):
    """Raised when evaluation points fall outside a basis domain."""

    exit_code = 3


class DataError(FgamError):
    """Raised when input files cannot be parsed or are inconsistent."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        row: Optional[int] = None,
    ) -> None:
        """Initialize data error.

        Args:
            message: Error message
            path: File the problem was found in
            row: 1-based row number of the offending record
        """
        location = ""
        if path is not None:
            location = f" [{path}" + (f", row {row}" if row is not None else "") + "]"
        super().__init__(f"{message}{location}", {"path": path, "row": row})
        self.path = path
        self.row = row


class ConfigError(FgamError):
    """Raised when a study or run configuration is invalid."""

    exit_code = 2

    def __init__(self, message: str, violations: Optional[List[str]] = None) -> None:
        """Initialize configuration error.

        Args:
            message: Error message
            violations: Every validation failure found, in input order
        """
        if violations:
            lines = "\n".join(f"  - {violation}" for violation in violations)
            message = f"{message}\n{lines}"
        super().__init__(message, {"violations": violations or []})
        self.violations = violations or []


class NumericalError(FgamError):
    """Raised when a linear-algebra step fails or is ill-conditioned."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        condition_number: Optional[float] = None,
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Initialize numerical error.

        Args:
            message: Error message
            condition_number: Condition number of the offending matrix
            details: Further diagnostics
        """
        merged = dict(details or {})
        if condition_number is not None:
            merged["condition_number"] = condition_number
            message = f"{message} (condition number {condition_number:.3e})"
        super().__init__(message, merged)
        self.condition_number = condition_number


class DegenerateDesignError(NumericalError):
    """Raised when a design carries no information for the requested term."""


class ConvergenceError(NumericalError):
    """Raised when variance-component optimization does not converge."""

    def __init__(self, message: str, best_fit: Any = None) -> None:
        """Initialize convergence error.

        Args:
            message: Error message
            best_fit: Best fit found before giving up
        """
        super().__init__(message)
        self.best_fit = best_fit
