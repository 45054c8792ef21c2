"""Tests for fgamtest exceptions."""

import pytest

from fgamtest.exceptions import (
    CapacityError,
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateDesignError,
    DomainError,
    FgamError,
    NumericalError,
    ParameterError,
    ShapeError,
)


class TestFgamError:
    """Test the base FgamError exception."""

    def test_init_with_message_only(self) -> None:
        """Test FgamError initialization with message only."""
        error = FgamError("Test error")
        assert str(error) == "Test error"
        assert error.message == "Test error"
        assert error.details == {}
        assert error.exit_code == 1

    def test_init_with_details(self) -> None:
        """Test FgamError keeps diagnostic details."""
        error = FgamError("Test error", details={"k": 3})
        assert error.details == {"k": 3}

    def test_inheritance(self) -> None:
        """Test that FgamError inherits from Exception."""
        assert isinstance(FgamError("Test error"), Exception)


class TestExitCodes:
    """Test the exit code carried by each error class."""

    @pytest.mark.parametrize(
        "error_class, code",
        [
            (ParameterError, 2),
            (ShapeError, 2),
            (CapacityError, 2),
            (DomainError, 3),
            (NumericalError, 4),
            (DegenerateDesignError, 4),
        ],
    )
    def test_exit_code(self, error_class: type, code: int) -> None:
        """Test each error maps to its documented exit code."""
        error = error_class("boom")
        assert isinstance(error, FgamError)
        assert error.exit_code == code

    def test_data_and_config_codes(self) -> None:
        """Test the codes of the errors with custom constructors."""
        assert DataError("bad").exit_code == 3
        assert ConfigError("bad").exit_code == 2
        assert ConvergenceError("bad").exit_code == 4


class TestDataError:
    """Test the DataError exception."""

    def test_message_names_path_and_row(self) -> None:
        """Test the location is appended to the message."""
        error = DataError("Non-numeric entry", path="X.csv", row=7)
        assert str(error) == "Non-numeric entry [X.csv, row 7]"
        assert error.path == "X.csv"
        assert error.row == 7
        assert error.details == {"path": "X.csv", "row": 7}

    def test_message_without_row(self) -> None:
        """Test a path without a row number."""
        error = DataError("File is empty", path="y.csv")
        assert str(error) == "File is empty [y.csv]"
        assert error.row is None

    def test_message_without_location(self) -> None:
        """Test an error without a path keeps the bare message."""
        assert str(DataError("No response")) == "No response"


class TestConfigError:
    """Test the ConfigError exception."""

    def test_lists_every_violation(self) -> None:
        """Test that each violation appears on its own line."""
        error = ConfigError("Invalid study", ["reps: too small", "kx: too small"])
        assert error.violations == ["reps: too small", "kx: too small"]
        lines = str(error).splitlines()
        assert lines[0] == "Invalid study"
        assert lines[1:] == ["  - reps: too small", "  - kx: too small"]

    def test_no_violations(self) -> None:
        """Test a config error without a violation list."""
        error = ConfigError("Missing file")
        assert error.violations == []
        assert str(error) == "Missing file"


class TestNumericalError:
    """Test NumericalError and its subclasses."""

    def test_condition_number_in_message(self) -> None:
        """Test the condition number is formatted into the message."""
        error = NumericalError("Singular system", condition_number=1.5e13)
        assert "1.500e+13" in str(error)
        assert error.condition_number == 1.5e13
        assert error.details["condition_number"] == 1.5e13

    def test_degenerate_design_is_numerical(self) -> None:
        """Test DegenerateDesignError inherits from NumericalError."""
        error = DegenerateDesignError("No signal", details={"mu": [0.0]})
        assert isinstance(error, NumericalError)
        assert error.details == {"mu": [0.0]}

    def test_convergence_error_carries_best_fit(self) -> None:
        """Test ConvergenceError keeps the best fit found."""
        sentinel = object()
        error = ConvergenceError("No convergence", best_fit=sentinel)
        assert error.best_fit is sentinel
        assert isinstance(error, NumericalError)
