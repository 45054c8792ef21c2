"""Tests for the functional dataset container."""

import numpy as np
import pytest

from fgamtest.exceptions import DataError, ParameterError, ShapeError
from fgamtest.models import FunctionalDataset


class TestFunctionalDataset:
    """Test FunctionalDataset validation and helpers."""

    def test_properties(self, tiny_data: FunctionalDataset) -> None:
        """Test dimension and range properties."""
        assert tiny_data.n_curves == 3
        assert tiny_data.n_times == 4
        assert tiny_data.x_range == (-1.0, 3.0)
        assert tiny_data.domain == (0.0, 1.0)
        assert tiny_data.times.shape == (3, 4)
        np.testing.assert_allclose(tiny_data.times[2], tiny_data.grid)

    def test_coerces_to_float(self) -> None:
        """Test integer inputs are converted to float arrays."""
        data = FunctionalDataset(
            predictors=[[1, 2], [3, 4]], grid=[0, 1], response=[1, 2]
        )
        assert data.predictors.dtype == float
        assert data.response is not None
        assert data.response.dtype == float

    def test_column_mismatch(self) -> None:
        """Test the grid must match the predictor columns."""
        with pytest.raises(ShapeError, match="3 columns"):
            FunctionalDataset(predictors=np.ones((2, 3)), grid=np.arange(4.0))

    def test_response_length(self) -> None:
        """Test the response must have one entry per curve."""
        with pytest.raises(ShapeError, match="2 curves"):
            FunctionalDataset(
                predictors=np.ones((2, 3)),
                grid=np.arange(3.0),
                response=np.ones(3),
            )

    def test_grid_must_increase(self) -> None:
        """Test a non-increasing grid is rejected."""
        with pytest.raises(ParameterError, match="strictly increasing"):
            FunctionalDataset(predictors=np.ones((2, 3)), grid=[0.0, 0.5, 0.5])

    def test_missing_values(self) -> None:
        """Test non-finite predictor values are rejected."""
        predictors = np.ones((2, 3))
        predictors[1, 1] = np.nan
        with pytest.raises(DataError):
            FunctionalDataset(predictors=predictors, grid=np.arange(3.0))

    def test_missing_response_values(self) -> None:
        """Test non-finite responses are rejected."""
        with pytest.raises(DataError):
            FunctionalDataset(
                predictors=np.ones((2, 3)),
                grid=np.arange(3.0),
                response=[1.0, np.inf],
            )

    def test_domain_must_contain_grid(self) -> None:
        """Test an explicit domain smaller than the grid is rejected."""
        with pytest.raises(ParameterError, match="contain the grid"):
            FunctionalDataset(
                predictors=np.ones((2, 3)), grid=[0.0, 0.5, 1.0], domain=(0.1, 1.0)
            )

    def test_explicit_domain(self) -> None:
        """Test a wider integration domain is kept."""
        data = FunctionalDataset(
            predictors=np.ones((2, 3)), grid=[0.1, 0.5, 0.9], domain=(0.0, 1.0)
        )
        assert data.domain == (0.0, 1.0)

    def test_require_response(self, tiny_data: FunctionalDataset) -> None:
        """Test require_response returns or raises."""
        np.testing.assert_array_equal(tiny_data.require_response(), [1.0, 2.0, 3.0])
        bare = FunctionalDataset(predictors=tiny_data.predictors, grid=tiny_data.grid)
        with pytest.raises(DataError, match="requires a response"):
            bare.require_response()

    def test_subset(self, tiny_data: FunctionalDataset) -> None:
        """Test subset keeps rows, responses and the domain."""
        part = tiny_data.subset([2, 0])
        assert part.n_curves == 2
        np.testing.assert_array_equal(part.predictors[0], tiny_data.predictors[2])
        assert part.response is not None
        np.testing.assert_array_equal(part.response, [3.0, 1.0])
        assert part.domain == tiny_data.domain

    def test_with_response(self, tiny_data: FunctionalDataset) -> None:
        """Test with_response replaces the response only."""
        replaced = tiny_data.with_response(np.zeros(3))
        assert replaced.response is not None
        np.testing.assert_array_equal(replaced.response, np.zeros(3))
        np.testing.assert_array_equal(replaced.predictors, tiny_data.predictors)
        np.testing.assert_array_equal(tiny_data.require_response(), [1.0, 2.0, 3.0])
