"""Tests for model fitting, prediction and surface evaluation."""

import json
import logging

import numpy as np
import pytest

from fgamtest.enums import ModelKind, Parameterization, QuadratureRule
from fgamtest.exceptions import DataError, DomainError, ParameterError
from fgamtest.fgam import (
    FgamFit,
    compare_prediction,
    evaluate_surface,
    fit_fgam_fixed,
    fit_fgam_gcv,
    fit_fgam_reml,
    fit_fgamm,
    fit_flm,
    fit_model,
    predict,
)
from fgamtest.lmm import FitOptions
from fgamtest.models import FunctionalDataset

KX = 6
KT = 6


@pytest.fixture
def fgamm_fit(nonlinear_data: FunctionalDataset) -> FgamFit:
    """FGAMM fitted to the non-linear dataset."""
    return fit_fgamm(nonlinear_data, KX, KT)


class TestFitFgamm:
    """Test fit_fgamm and fit_flm."""

    def test_coefficient_shapes(self, fgamm_fit: FgamFit) -> None:
        """Test coefficient and variance component layout."""
        assert fgamm_fit.model is ModelKind.FGAMM
        assert fgamm_fit.parameterization is Parameterization.PSANOVA
        coefficients = fgamm_fit.coefficients
        assert coefficients["beta"].shape == (3,)
        assert coefficients["b1"].shape == (KT - 2,)
        assert coefficients["b2"].shape == (2 * (KX - 2),)
        assert coefficients["b3"].shape == ((KX - 2) * (KT - 2),)
        assert set(fgamm_fit.variance_components) == {
            "sigma2_e",
            "sigma2_1",
            "sigma2_2",
            "sigma2_3",
        }
        assert fgamm_fit.n_obs == 100

    def test_flm_is_nested(self, nonlinear_data: FunctionalDataset) -> None:
        """Test the FGAMM restricted likelihood is at least the FLM one."""
        flm = fit_flm(nonlinear_data, KT)
        fgamm = fit_fgamm(nonlinear_data, KX, KT)
        assert flm.x_basis is None
        assert flm.coefficients["b2"].size == 0
        assert flm.coefficients["b3"].size == 0
        assert fgamm.criterion >= flm.criterion - 1e-6

    def test_captures_nonlinearity(self, nonlinear_data: FunctionalDataset) -> None:
        """Test the FGAMM fits a non-linear surface better than the FLM."""
        response = nonlinear_data.require_response()
        flm = fit_flm(nonlinear_data, KT)
        fgamm = fit_fgamm(nonlinear_data, KX, KT)
        flm_rss = float(np.sum((response - flm.fitted_values) ** 2))
        fgamm_rss = float(np.sum((response - fgamm.fitted_values) ** 2))
        assert fgamm_rss < flm_rss

    def test_too_few_curves(self, linear_data: FunctionalDataset) -> None:
        """Test at least 11 curves are required."""
        with pytest.raises(ParameterError, match="more than 10 curves"):
            fit_fgamm(linear_data.subset(range(10)), KX, KT)

    def test_missing_response(self, linear_data: FunctionalDataset) -> None:
        """Test fitting needs a response."""
        bare = FunctionalDataset(linear_data.predictors, linear_data.grid)
        with pytest.raises(DataError):
            fit_flm(bare, KT)

    def test_unconverged_fit_kept_with_warning(
        self, nonlinear_data: FunctionalDataset, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Test a capped search returns its best iterate and says so."""
        capped = FitOptions(max_iter=1)
        with caplog.at_level(logging.WARNING, logger="fgamtest.lmm"):
            fgamm = fit_fgamm(nonlinear_data, KX, KT, options=capped)
            flm = fit_model(ModelKind.FLM, nonlinear_data, kt=KT, options=capped)
        for fit in (fgamm, flm):
            assert any("unconverged REML fit" in w for w in fit.warnings)
            assert np.all(np.isfinite(fit.fitted_values))
        assert caplog.text.count("unconverged REML fit") == 2


class TestTensorFits:
    """Test the tensor-product fits."""

    def test_gcv(self, nonlinear_data: FunctionalDataset) -> None:
        """Test GCV selection returns positive smoothing parameters."""
        fit = fit_fgam_gcv(nonlinear_data, KX, KT)
        assert fit.model is ModelKind.FGAM_GCV
        assert fit.parameterization is Parameterization.TENSOR
        assert fit.variance_components["lambda_x"] > 0
        assert fit.variance_components["lambda_t"] > 0
        assert fit.edf is not None and 4.0 <= fit.edf < KX * KT
        assert fit.coefficients["theta"].shape == (KX * KT,)
        assert fit.u_null is not None and fit.u_null.shape == (KX * KT, 4)

    def test_gcv_not_worse_than_grid_point(
        self, nonlinear_data: FunctionalDataset
    ) -> None:
        """Test the selected GCV score beats a fixed grid point."""
        selected = fit_fgam_gcv(nonlinear_data, KX, KT)
        # 1e2 is a point of the coarse grid
        fixed = fit_fgam_fixed(
            nonlinear_data, KX, KT, QuadratureRule.TRAPEZOID, 100.0, 100.0
        )
        assert selected.criterion <= fixed.criterion * (1.0 + 1e-10)

    def test_fixed_needs_positive_smoothing(
        self, nonlinear_data: FunctionalDataset
    ) -> None:
        """Test non-positive smoothing parameters are rejected."""
        with pytest.raises(ParameterError, match="positive"):
            fit_fgam_fixed(nonlinear_data, KX, KT, QuadratureRule.TRAPEZOID, 0.0, 1.0)

    def test_reml(self, nonlinear_data: FunctionalDataset) -> None:
        """Test REML selection returns a finite criterion."""
        fit = fit_fgam_reml(nonlinear_data, KX, KT)
        assert fit.model is ModelKind.FGAM_REML
        assert np.isfinite(fit.criterion)
        assert fit.variance_components["sigma2_e"] > 0

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_fit_model_dispatch(
        self, linear_data: FunctionalDataset, kind: ModelKind
    ) -> None:
        """Test fit_model returns a fit of the requested kind."""
        assert fit_model(kind, linear_data, KX, KT).model is kind


class TestPredict:
    """Test prediction for new curves."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_training_curves(
        self, linear_data: FunctionalDataset, kind: ModelKind
    ) -> None:
        """Test predicting the training curves reproduces the fitted values."""
        fit = fit_model(kind, linear_data, KX, KT)
        prediction = predict(fit, linear_data)
        np.testing.assert_allclose(prediction.values, fit.fitted_values, atol=1e-9)
        assert prediction.warnings == []

    def test_serialized_fit(self, fgamm_fit: FgamFit) -> None:
        """Test a fit restored from JSON predicts like the original."""
        payload = json.loads(json.dumps(fgamm_fit.to_dict()))
        restored = FgamFit.from_dict(payload)
        assert restored.model is ModelKind.FGAMM
        assert restored.variance_components == fgamm_fit.variance_components
        grid = np.linspace(0.0, 1.0, 30)
        curves = FunctionalDataset(
            predictors=np.vstack([np.sin(np.pi * grid), grid - 0.5]), grid=grid
        )
        np.testing.assert_allclose(
            predict(restored, curves).values, predict(fgamm_fit, curves).values
        )

    def test_malformed_payload(self, fgamm_fit: FgamFit) -> None:
        """Test a payload missing fields is rejected."""
        payload = fgamm_fit.to_dict()
        del payload["t_basis"]
        with pytest.raises(ParameterError, match="Malformed"):
            FgamFit.from_dict(payload)

    def test_time_domain_outside(self, fgamm_fit: FgamFit) -> None:
        """Test a wider time domain than the training one is rejected."""
        curves = FunctionalDataset(
            predictors=np.zeros((2, 4)), grid=np.linspace(0.0, 1.5, 4)
        )
        with pytest.raises(DomainError, match="training domain"):
            predict(fgamm_fit, curves)

    def test_clamps_predictor_values(self, fgamm_fit: FgamFit) -> None:
        """Test out-of-range predictor values are clamped with a warning."""
        low, high = fgamm_fit.x_range
        grid = np.linspace(0.0, 1.0, 30)
        far = FunctionalDataset(
            predictors=np.full((1, 30), high + 10.0), grid=grid
        )
        edge = FunctionalDataset(predictors=np.full((1, 30), high), grid=grid)
        prediction = predict(fgamm_fit, far)
        assert len(prediction.warnings) == 1
        assert "clamped" in prediction.warnings[0]
        assert np.all(np.isfinite(prediction.values))
        assert predict(fgamm_fit, edge).warnings == []


class TestSurface:
    """Test evaluate_surface."""

    def test_psanova_components(self, fgamm_fit: FgamFit) -> None:
        """Test component names, shapes and the parametric part."""
        surface = evaluate_surface(fgamm_fit, n_points=11)
        assert set(surface.components) == {
            "parametric",
            "linear_x_smooth_t",
            "smooth_x_parametric_t",
            "smooth_xt",
        }
        assert surface.total.shape == (11, 11)
        beta = fgamm_fit.coefficients["beta"]
        xx, tt = np.meshgrid(surface.x_grid, surface.t_grid, indexing="ij")
        np.testing.assert_allclose(
            surface.components["parametric"],
            beta[0] + beta[1] * xx + beta[2] * xx * tt,
        )
        frame = surface.to_frame()
        assert len(frame) == 121
        assert list(frame.columns[:2]) == ["x", "t"]
        np.testing.assert_allclose(frame["total"], surface.total.ravel())

    def test_flm_surface_is_linear_in_x(self, linear_data: FunctionalDataset) -> None:
        """Test the FLM surface has zero second differences in x."""
        fit = fit_flm(linear_data, KT)
        surface = evaluate_surface(fit, x_grid=np.linspace(-2.0, 2.0, 9))
        np.testing.assert_allclose(np.diff(surface.total, 2, axis=0), 0.0, atol=1e-9)
        np.testing.assert_array_equal(surface.components["smooth_xt"], 0.0)

    def test_tensor_null_space_is_bilinear(
        self, nonlinear_data: FunctionalDataset
    ) -> None:
        """Test the null-space component lies in span{1, x, t, x t}."""
        fit = fit_fgam_fixed(nonlinear_data, KX, KT, QuadratureRule.TRAPEZOID, 1.0, 1.0)
        surface = evaluate_surface(fit, n_points=9)
        assert set(surface.components) == {"null_space", "range_space"}
        xx, tt = np.meshgrid(surface.x_grid, surface.t_grid, indexing="ij")
        bilinear = np.column_stack(
            [np.ones(xx.size), xx.ravel(), tt.ravel(), (xx * tt).ravel()]
        )
        values = surface.components["null_space"].ravel()
        coefficients, *_ = np.linalg.lstsq(bilinear, values, rcond=None)
        np.testing.assert_allclose(bilinear @ coefficients, values, atol=1e-6)


class TestComparePrediction:
    """Test compare_prediction."""

    def test_reproducible_splits(self, linear_data: FunctionalDataset) -> None:
        """Test FLM is included and the same seed repeats the RMSE table."""
        first = compare_prediction(
            linear_data, models=[ModelKind.FGAMM], n_splits=3, seed=9, kx=KX, kt=KT
        )
        again = compare_prediction(
            linear_data,
            models=[ModelKind.FGAMM],
            n_splits=3,
            seed=9,
            kx=KX,
            kt=KT,
            threads=2,
        )
        assert first.models == (ModelKind.FLM, ModelKind.FGAMM)
        assert first.rmse.shape == (3, 2)
        np.testing.assert_array_equal(first.rmse, again.rmse)
        assert first.failures() == {"flm": 0, "fgamm": 0}
        assert set(first.mean_rmse()) == {"flm", "fgamm"}
        assert 0.0 <= first.beats_flm()["fgamm"] <= 1.0
        assert len(first.to_frame()) == 6

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 0.1])
    def test_invalid_fraction(
        self, linear_data: FunctionalDataset, fraction: float
    ) -> None:
        """Test training shares that leave no usable split are rejected."""
        with pytest.raises(ParameterError):
            compare_prediction(linear_data, train_fraction=fraction, kx=KX, kt=KT)
