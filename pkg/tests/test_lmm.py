"""Tests for the variance-component mixed model."""

import logging
from typing import List

import numpy as np
import pytest

from fgamtest.enums import EstimationMethod
from fgamtest.exceptions import (
    ConvergenceError,
    DegenerateDesignError,
    ParameterError,
    ShapeError,
)
from fgamtest.lmm import (
    FitOptions,
    MixedModelSpec,
    criterion_gradient,
    fit_mixed_model,
    fit_with_fallback,
    log_likelihood,
    predict_random_effects,
    profiled_criterion,
    restricted_log_likelihood,
)


def dense_loglik(
    spec: MixedModelSpec, variances: List[float], method: EstimationMethod
) -> float:
    """Log-likelihood from the full N x N covariance matrix."""
    n, p = spec.n_obs, spec.n_fixed
    x, y = spec.fixed, spec.response
    cov = variances[0] * np.eye(n)
    for z, s2 in zip(spec.blocks, variances[1:]):
        cov = cov + s2 * z @ z.T
    inv = np.linalg.inv(cov)
    xvx = x.T @ inv @ x
    beta = np.linalg.solve(xvx, x.T @ inv @ y)
    r = y - x @ beta
    value = np.linalg.slogdet(cov)[1] + r @ inv @ r
    if method is EstimationMethod.REML:
        value += (n - p) * np.log(2 * np.pi)
        value += np.linalg.slogdet(xvx)[1] - np.linalg.slogdet(x.T @ x)[1]
    else:
        value += n * np.log(2 * np.pi)
    return float(-0.5 * value)


@pytest.fixture
def two_block_spec() -> MixedModelSpec:
    """Random model with two blocks and a non-zero first variance."""
    rng = np.random.default_rng(17)
    n = 80
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    z1 = rng.standard_normal((n, 5))
    z2 = rng.standard_normal((n, 3))
    y = x @ [1.0, -0.5] + z1 @ (1.5 * rng.standard_normal(5))
    y = y + 0.7 * rng.standard_normal(n)
    return MixedModelSpec(response=y, fixed=x, blocks=(z1, z2))


class TestMixedModelSpec:
    """Test MixedModelSpec validation."""

    def test_rank_deficient_fixed(self) -> None:
        """Test collinear fixed effects are rejected."""
        x = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(DegenerateDesignError, match="rank 1"):
            MixedModelSpec(response=np.zeros(10), fixed=x)

    def test_too_many_blocks(self) -> None:
        """Test more than three blocks are rejected."""
        blocks = tuple(np.ones((10, 1)) for _ in range(4))
        with pytest.raises(ParameterError, match="At most 3"):
            MixedModelSpec(response=np.zeros(10), fixed=np.ones(10), blocks=blocks)

    def test_row_mismatch(self) -> None:
        """Test blocks must have one row per observation."""
        with pytest.raises(ShapeError, match="Block 1"):
            MixedModelSpec(
                response=np.zeros(10), fixed=np.ones(10), blocks=(np.ones((9, 2)),)
            )

    def test_helpers(self, two_block_spec: MixedModelSpec) -> None:
        """Test dims, random_design and block selection."""
        assert two_block_spec.dims == (5, 3)
        assert two_block_spec.random_design.shape == (80, 8)
        reduced = two_block_spec.select_blocks([1])
        assert reduced.dims == (3,)
        swapped = two_block_spec.with_response(np.zeros(80))
        assert swapped.dims == (5, 3)
        np.testing.assert_array_equal(swapped.response, np.zeros(80))


class TestLikelihood:
    """Test the likelihood against dense formulas."""

    @pytest.mark.parametrize("method", list(EstimationMethod))
    def test_matches_dense(
        self, two_block_spec: MixedModelSpec, method: EstimationMethod
    ) -> None:
        """Test the q x q evaluation equals the N x N one."""
        variances = [0.5, 2.0, 0.3]
        assert log_likelihood(two_block_spec, variances, method) == pytest.approx(
            dense_loglik(two_block_spec, variances, method), rel=1e-10
        )

    def test_zero_variance_block(self, two_block_spec: MixedModelSpec) -> None:
        """Test a zero block variance matches the dense formula."""
        variances = [0.5, 0.0, 1.0]
        assert restricted_log_likelihood(two_block_spec, variances) == pytest.approx(
            dense_loglik(two_block_spec, variances, EstimationMethod.REML), rel=1e-10
        )

    def test_invariant_to_fixed_reparameterization(
        self, two_block_spec: MixedModelSpec
    ) -> None:
        """Test REML does not change when X is replaced by X A."""
        transform = np.array([[2.0, 1.0], [0.0, 3.0]])
        moved = MixedModelSpec(
            response=two_block_spec.response,
            fixed=two_block_spec.fixed @ transform,
            blocks=two_block_spec.blocks,
        )
        variances = [0.5, 2.0, 0.3]
        assert restricted_log_likelihood(moved, variances) == pytest.approx(
            restricted_log_likelihood(two_block_spec, variances), rel=1e-10
        )

    def test_invalid_variances(self, two_block_spec: MixedModelSpec) -> None:
        """Test variance vectors of the wrong length or sign are rejected."""
        with pytest.raises(ShapeError):
            log_likelihood(two_block_spec, [1.0, 1.0])
        with pytest.raises(ParameterError):
            log_likelihood(two_block_spec, [0.0, 1.0, 1.0])

    @pytest.mark.parametrize("method", list(EstimationMethod))
    def test_gradient_matches_finite_differences(
        self, two_block_spec: MixedModelSpec, method: EstimationMethod
    ) -> None:
        """Test the analytic gradient against central differences."""
        point = np.array([0.4, -1.2])
        step = 1e-5
        numeric = np.zeros(2)
        for j in range(2):
            shift = np.zeros(2)
            shift[j] = step
            numeric[j] = (
                profiled_criterion(two_block_spec, point + shift, method)
                - profiled_criterion(two_block_spec, point - shift, method)
            ) / (2 * step)
        np.testing.assert_allclose(
            criterion_gradient(two_block_spec, point, method),
            numeric,
            rtol=1e-5,
            atol=1e-6,
        )


class TestFitMixedModel:
    """Test fit_mixed_model."""

    def test_reaches_grid_maximum(self, two_block_spec: MixedModelSpec) -> None:
        """Test the fitted criterion is at least the best grid value."""
        fit = fit_mixed_model(two_block_spec)
        grid = np.linspace(-6.0, 4.0, 21)
        best = max(
            profiled_criterion(two_block_spec, [a, b]) for a in grid for b in grid
        )
        assert fit.converged
        assert fit.criterion >= best - 1e-6
        assert fit.sigma2[0] > 0

    def test_criterion_matches_likelihood(self, two_block_spec: MixedModelSpec) -> None:
        """Test the reported criterion is the likelihood at the estimates."""
        fit = fit_mixed_model(two_block_spec, EstimationMethod.ML)
        variances = [fit.sigma2_e, *fit.sigma2]
        assert fit.criterion == pytest.approx(
            dense_loglik(two_block_spec, variances, EstimationMethod.ML), rel=1e-8
        )

    def test_blups_match_dense_formula(self, two_block_spec: MixedModelSpec) -> None:
        """Test b_j = s_j^2 Z_j' V^-1 (y - X beta)."""
        fit = fit_mixed_model(two_block_spec)
        cov = fit.sigma2_e * np.eye(80)
        for z, s2 in zip(two_block_spec.blocks, fit.sigma2):
            cov = cov + s2 * z @ z.T
        residual = two_block_spec.response - two_block_spec.fixed @ fit.beta
        for z, s2, blup in zip(two_block_spec.blocks, fit.sigma2, fit.blups):
            expected = s2 * z.T @ np.linalg.solve(cov, residual)
            np.testing.assert_allclose(blup, expected, atol=1e-8)
        for blup, again in zip(
            fit.blups, predict_random_effects(fit, two_block_spec)
        ):
            np.testing.assert_allclose(again, blup, atol=1e-10)

    def test_fitted_values(self, two_block_spec: MixedModelSpec) -> None:
        """Test fitted values combine fixed and random parts."""
        fit = fit_mixed_model(two_block_spec)
        expected = two_block_spec.fixed @ fit.beta
        for z, b in zip(two_block_spec.blocks, fit.blups):
            expected = expected + z @ b
        np.testing.assert_allclose(fit.fitted_values(two_block_spec), expected)

    def test_all_ratios_fixed(self, two_block_spec: MixedModelSpec) -> None:
        """Test fixed ratios are used as given."""
        fit = fit_mixed_model(two_block_spec, fixed_ratios={0: 2.0, 1: 0.0})
        np.testing.assert_allclose(fit.ratios, [2.0, 0.0])
        assert fit.boundary == (False, True)
        assert fit.iterations == 0

    def test_partially_fixed(self, two_block_spec: MixedModelSpec) -> None:
        """Test one fixed ratio leaves the other free."""
        fit = fit_mixed_model(two_block_spec, fixed_ratios={1: 0.0})
        assert fit.ratios[1] == 0.0
        assert fit.ratios[0] > 0

    def test_invalid_fixed_ratio(self, two_block_spec: MixedModelSpec) -> None:
        """Test out-of-range fixed ratios are rejected."""
        with pytest.raises(ParameterError, match="Invalid fixed ratio"):
            fit_mixed_model(two_block_spec, fixed_ratios={5: 1.0})

    def test_too_few_observations(self) -> None:
        """Test N <= p + 1 is rejected."""
        spec = MixedModelSpec(
            response=np.arange(3.0),
            fixed=np.column_stack([np.ones(3), np.arange(3.0)]),
            blocks=(np.eye(3),),
        )
        with pytest.raises(ParameterError, match="N > p \\+ 1"):
            fit_mixed_model(spec)

    def test_no_random_blocks(self) -> None:
        """Test a model without blocks reduces to least squares."""
        rng = np.random.default_rng(2)
        x = np.column_stack([np.ones(30), rng.standard_normal(30)])
        y = x @ [2.0, 1.0] + rng.standard_normal(30)
        fit = fit_mixed_model(MixedModelSpec(response=y, fixed=x))
        expected, *_ = np.linalg.lstsq(x, y, rcond=None)
        np.testing.assert_allclose(fit.beta, expected, atol=1e-10)
        residual = y - x @ expected
        assert fit.sigma2_e == pytest.approx(residual @ residual / 28)


class TestFitOptions:
    """Test optimizer controls and the unconverged-fit fallback."""

    @pytest.mark.parametrize(
        "kwargs",
        [{"max_iter": 0}, {"xatol": 0.0}, {"fatol": -1.0}, {"start_ratios": ()}],
    )
    def test_invalid_options(self, kwargs: dict) -> None:
        """Test non-positive caps, tolerances and empty starts are rejected."""
        with pytest.raises(ParameterError):
            FitOptions(**kwargs)

    def test_single_start(self, two_block_spec: MixedModelSpec) -> None:
        """Test one start reaches the same optimum as the default three."""
        default = fit_mixed_model(two_block_spec)
        single = fit_mixed_model(
            two_block_spec, options=FitOptions(start_ratios=(1.0,))
        )
        assert single.criterion == pytest.approx(default.criterion, abs=1e-5)

    def test_iteration_cap_raises(self, two_block_spec: MixedModelSpec) -> None:
        """Test one iteration per start does not converge but keeps a fit."""
        with pytest.raises(ConvergenceError) as info:
            fit_mixed_model(two_block_spec, options=FitOptions(max_iter=1))
        best = info.value.best_fit
        assert best is not None
        assert not best.converged
        assert np.isfinite(best.criterion)

    def test_fallback_returns_best_iterate(
        self, two_block_spec: MixedModelSpec, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Test the fallback logs, records a warning and returns the iterate."""
        warnings: List[str] = []
        with caplog.at_level(logging.WARNING, logger="fgamtest.lmm"):
            fit = fit_with_fallback(
                two_block_spec, warnings, options=FitOptions(max_iter=1)
            )
        assert not fit.converged
        assert len(warnings) == 1
        assert "unconverged REML fit" in warnings[0]
        assert "unconverged REML fit" in caplog.text

    def test_fallback_passes_converged_fit(
        self, two_block_spec: MixedModelSpec
    ) -> None:
        """Test a converged fit comes back without warnings."""
        warnings: List[str] = []
        fit = fit_with_fallback(two_block_spec, warnings, EstimationMethod.ML)
        assert fit.converged
        assert fit.method is EstimationMethod.ML
        assert warnings == []
