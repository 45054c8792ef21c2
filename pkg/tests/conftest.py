"""Shared fixtures: small synthetic datasets."""

import numpy as np
import pytest

from fgamtest.models import FunctionalDataset
from fgamtest.sim import gen_predictors, gen_response_convex


def convex_dataset(
    n_curves: int, n_times: int, phi: float, seed: int
) -> FunctionalDataset:
    """Dataset from the convex-combination scenario."""
    predictors, grid = gen_predictors(n_curves, n_times, seed=seed)
    response = gen_response_convex(predictors, grid, phi, seed=seed + 1)
    return FunctionalDataset(predictors=predictors, grid=grid, response=response)


@pytest.fixture
def linear_data() -> FunctionalDataset:
    """60 curves on 20 times with a linear surface."""
    return convex_dataset(60, 20, 1.0, seed=11)


@pytest.fixture
def nonlinear_data() -> FunctionalDataset:
    """100 curves on 30 times with a strongly non-linear surface."""
    return convex_dataset(100, 30, 0.0, seed=23)


@pytest.fixture
def tiny_data() -> FunctionalDataset:
    """Hand-written dataset of 3 curves on 4 times."""
    return FunctionalDataset(
        predictors=np.array(
            [[0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 1.0, 1.0], [-1.0, 0.5, 0.0, 2.0]]
        ),
        grid=np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]),
        response=np.array([1.0, 2.0, 3.0]),
    )
