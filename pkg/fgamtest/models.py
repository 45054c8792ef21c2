"""Core data models shared across the fgamtest modules.

The numerical containers are frozen dataclasses holding numpy arrays. They
validate shapes on construction so downstream code can assume a dense,
consistent dataset.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, ParameterError, ShapeError


@dataclass(frozen=True)
class FunctionalDataset:
    """Scalar responses paired with densely observed predictor curves.

    Args:
        predictors: N x J matrix, row i holds curve i at the grid times
        grid: J strictly increasing observation times
        response: N responses; None for prediction-only data
        domain: Integration interval of t; defaults to the grid end points
    """

    predictors: np.ndarray
    grid: np.ndarray
    response: Optional[np.ndarray] = None
    domain: Optional[Tuple[float, float]] = field(default=None)

    def __post_init__(self) -> None:
        """Validate shapes and coerce to float arrays."""
        predictors = np.atleast_2d(np.asarray(self.predictors, dtype=float))
        grid = np.asarray(self.grid, dtype=float).ravel()
        if predictors.ndim != 2:
            raise ShapeError("Predictor matrix must be two-dimensional")
        if predictors.shape[1] != grid.size:
            raise ShapeError(
                f"Predictor matrix has {predictors.shape[1]} columns but the "
                f"grid has {grid.size} times"
            )
        if grid.size < 2:
            raise ParameterError("At least two observation times are required")
        if np.any(np.diff(grid) <= 0):
            raise ParameterError("Observation grid must be strictly increasing")
        if not np.all(np.isfinite(predictors)):
            raise DataError("Predictor matrix contains missing or non-finite values")
        object.__setattr__(self, "predictors", predictors)
        object.__setattr__(self, "grid", grid)

        if self.response is not None:
            response = np.asarray(self.response, dtype=float).ravel()
            if response.size != predictors.shape[0]:
                raise ShapeError(
                    f"Response has {response.size} entries but there are "
                    f"{predictors.shape[0]} curves"
                )
            if not np.all(np.isfinite(response)):
                raise DataError("Response contains missing or non-finite values")
            object.__setattr__(self, "response", response)

        domain = self.domain
        if domain is None:
            domain = (float(grid[0]), float(grid[-1]))
        a, b = float(domain[0]), float(domain[1])
        if not a < b or grid[0] < a or grid[-1] > b:
            raise ParameterError(
                f"Time domain [{a}, {b}] must be nondegenerate and contain the grid"
            )
        object.__setattr__(self, "domain", (a, b))

    @property
    def n_curves(self) -> int:
        """Number of curves N."""
        return int(self.predictors.shape[0])

    @property
    def n_times(self) -> int:
        """Number of observation times J."""
        return int(self.grid.size)

    @property
    def x_range(self) -> Tuple[float, float]:
        """Smallest and largest observed predictor value."""
        return float(self.predictors.min()), float(self.predictors.max())

    @property
    def times(self) -> np.ndarray:
        """N x J matrix of observation times, one copy of the grid per curve."""
        return np.broadcast_to(self.grid, self.predictors.shape)

    def require_response(self) -> np.ndarray:
        """Return the response vector or fail when it is missing.

        Returns:
            Response vector of length N

        Raises:
            DataError: If the dataset carries no response
        """
        if self.response is None:
            raise DataError("This operation requires a response vector")
        return self.response

    def subset(self, rows: Sequence[int]) -> "FunctionalDataset":
        """Select a subset of curves (and responses).

        Args:
            rows: Row indices to keep

        Returns:
            New dataset sharing the grid and domain
        """
        index = np.asarray(rows, dtype=int)
        return FunctionalDataset(
            predictors=self.predictors[index],
            grid=self.grid,
            response=None if self.response is None else self.response[index],
            domain=self.domain,
        )

    def with_response(self, response: np.ndarray) -> "FunctionalDataset":
        """Return a copy of the dataset with a replaced response vector."""
        return FunctionalDataset(
            predictors=self.predictors,
            grid=self.grid,
            response=response,
            domain=self.domain,
        )
