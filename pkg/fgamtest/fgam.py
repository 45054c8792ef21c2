"""Model fitting, prediction and surface decomposition for functional GAMs.

Four models share one result type, `FgamFit`:

* ``fgamm``: PS-ANOVA mixed model with three variance components (REML);
* ``flm``: the functional linear model, i.e. the fixed block and Z1 only;
* ``fgam-gcv`` and ``fgam-reml``: the tensor-product penalized fit with
  (lx, lt) chosen by GCV or by the restricted likelihood.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import minimize

from .config import (
    DEFAULT_KT,
    DEFAULT_KX,
    DEFAULT_QUADRATURE,
    DEFAULT_SEED,
    DEFAULT_SURFACE_GRID,
)
from .design import (
    QuadratureOperator,
    TensorDesign,
    box_product,
    build_psanova_design,
    build_tensor_design,
    penalized_least_squares,
    psanova_design_from_bases,
    quadrature_weights,
    tensor_design_from_bases,
)
from .enums import EstimationMethod, ModelKind, Parameterization, QuadratureRule
from .exceptions import DomainError, FgamError, NumericalError, ParameterError
from .lmm import (
    LOG_RATIO_BOUNDS,
    FitOptions,
    MixedModelSpec,
    VarianceComponentFit,
    fit_with_fallback,
)
from .models import FunctionalDataset
from .splines import (
    DOMAIN_RTOL,
    KnotVector,
    MarginalBasis,
    build_marginal_basis,
    eval_basis,
    make_knots,
    marginal_mixed_transform,
    scaled_penalty,
    split_penalty,
)
from .streams import parallel_map, rng_for

logger = logging.getLogger(__name__)

MIN_CURVES = 11
GCV_LOG10_RANGE = (-4.0, 8.0)
GCV_GRID_SIZE = 21
TRAIN_FRACTION = 2.0 / 3.0
N_SPLITS = 25

PSANOVA_COMPONENTS = (
    "parametric",
    "linear_x_smooth_t",
    "smooth_x_parametric_t",
    "smooth_xt",
)
TENSOR_COMPONENTS = ("null_space", "range_space")


@dataclass(frozen=True)
class FgamFit:
    """Fitted FLM, FGAMM or tensor-product FGAM.

    PS-ANOVA fits hold the coefficients ``beta``, ``b1``, ``b2`` and ``b3``
    (``b2``/``b3`` empty for the FLM); tensor fits hold ``theta`` together
    with the null-space eigenvectors ``u_null`` of their penalty.

    Args:
        model: Model that was fitted
        parameterization: PS-ANOVA or tensor construction
        coefficients: Coefficient vectors by name
        variance_components: Variances (PS-ANOVA) or smoothing parameters
        criterion: Maximized log-likelihood or minimized GCV score
        x_basis: Split x basis; None for the FLM
        t_basis: Split t basis
        quadrature_rule: Rule used to integrate along the curves
        t_domain: Integration interval of the training data
        x_range: Predictor range of the training data
        fitted_values: Training fitted values
        edf: Effective degrees of freedom (tensor fits)
        u_null: Penalty null-space eigenvectors (tensor fits)
        warnings: Warnings raised while fitting
    """

    model: ModelKind
    parameterization: Parameterization
    coefficients: Dict[str, np.ndarray]
    variance_components: Dict[str, float]
    criterion: float
    x_basis: Optional[MarginalBasis]
    t_basis: MarginalBasis
    quadrature_rule: QuadratureRule
    t_domain: Tuple[float, float]
    x_range: Tuple[float, float]
    fitted_values: np.ndarray
    edf: Optional[float] = None
    u_null: Optional[np.ndarray] = None
    warnings: Tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        """Number of training curves."""
        return int(self.fitted_values.size)

    def summary(self) -> Dict[str, Any]:
        """JSON-ready summary of the estimated variances and criterion."""
        result: Dict[str, Any] = {
            "model": self.model.value,
            "parameterization": self.parameterization.value,
            "n_obs": self.n_obs,
            "criterion": self.criterion,
            "variance_components": dict(self.variance_components),
        }
        if self.edf is not None:
            result["edf"] = self.edf
        return result

    def to_dict(self) -> Dict[str, Any]:
        """Serialize everything prediction needs to plain JSON types."""
        return {
            "model": self.model.value,
            "parameterization": self.parameterization.value,
            "coefficients": {k: v.tolist() for k, v in self.coefficients.items()},
            "variance_components": dict(self.variance_components),
            "criterion": self.criterion,
            "x_basis": None if self.x_basis is None else _basis_to_dict(self.x_basis),
            "t_basis": _basis_to_dict(self.t_basis),
            "quadrature_rule": self.quadrature_rule.value,
            "t_domain": list(self.t_domain),
            "x_range": list(self.x_range),
            "fitted_values": self.fitted_values.tolist(),
            "edf": self.edf,
            "u_null": None if self.u_null is None else self.u_null.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "FgamFit":
        """Rebuild a fit serialized by `to_dict`.

        Raises:
            ParameterError: If a required field is missing or malformed
        """
        try:
            return cls(
                model=ModelKind(payload["model"]),
                parameterization=Parameterization(payload["parameterization"]),
                coefficients={
                    k: np.asarray(v, dtype=float)
                    for k, v in payload["coefficients"].items()
                },
                variance_components={
                    k: float(v) for k, v in payload["variance_components"].items()
                },
                criterion=float(payload["criterion"]),
                x_basis=(
                    None
                    if payload.get("x_basis") is None
                    else _basis_from_dict(payload["x_basis"])
                ),
                t_basis=_basis_from_dict(payload["t_basis"]),
                quadrature_rule=QuadratureRule(payload["quadrature_rule"]),
                t_domain=_pair(payload["t_domain"]),
                x_range=_pair(payload["x_range"]),
                fitted_values=np.asarray(payload["fitted_values"], dtype=float),
                edf=None if payload.get("edf") is None else float(payload["edf"]),
                u_null=(
                    None
                    if payload.get("u_null") is None
                    else np.asarray(payload["u_null"], dtype=float)
                ),
                warnings=tuple(payload.get("warnings", ())),
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ParameterError(f"Malformed serialized fit: {e}") from e


@dataclass(frozen=True)
class Prediction:
    """Predicted means with any warnings raised on the way."""

    values: np.ndarray
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class SurfaceDecomposition:
    """Estimated surface F(x, t) split into its additive components.

    Args:
        x_grid: Predictor values (rows of every component)
        t_grid: Times (columns of every component)
        components: Component name -> len(x_grid) x len(t_grid) values
    """

    x_grid: np.ndarray
    t_grid: np.ndarray
    components: Dict[str, np.ndarray]

    @property
    def total(self) -> np.ndarray:
        """Sum of all components, the full surface estimate."""
        return np.sum(list(self.components.values()), axis=0)

    def to_frame(self) -> pd.DataFrame:
        """Long table with one row per (x, t) point."""
        xx, tt = np.meshgrid(self.x_grid, self.t_grid, indexing="ij")
        columns: Dict[str, np.ndarray] = {"x": xx.ravel(), "t": tt.ravel()}
        for name, values in self.components.items():
            columns[name] = values.ravel()
        columns["total"] = self.total.ravel()
        return pd.DataFrame(columns)


@dataclass(frozen=True)
class PredictionComparison:
    """Held-out RMSE of several models over repeated random splits.

    Args:
        models: Compared models, FLM included
        rmse: n_splits x n_models test-set RMSE (NaN where a fit failed)
        train_fraction: Share of curves used for fitting
        seed: Seed of the split streams
    """

    models: Tuple[ModelKind, ...]
    rmse: np.ndarray
    train_fraction: float
    seed: int

    @property
    def n_splits(self) -> int:
        """Number of random splits."""
        return int(self.rmse.shape[0])

    def failures(self) -> Dict[str, int]:
        """Failed fits per model."""
        return {
            m.value: int(np.isnan(self.rmse[:, i]).sum())
            for i, m in enumerate(self.models)
        }

    def mean_rmse(self) -> Dict[str, float]:
        """Mean test-set RMSE per model over successful splits."""
        result = {}
        for i, m in enumerate(self.models):
            column = self.rmse[:, i]
            ok = ~np.isnan(column)
            result[m.value] = float(column[ok].mean()) if ok.any() else float("nan")
        return result

    def beats_flm(self) -> Dict[str, float]:
        """Fraction of splits in which each model has a lower RMSE than the FLM."""
        if ModelKind.FLM not in self.models:
            return {}
        reference = self.rmse[:, self.models.index(ModelKind.FLM)]
        return {
            m.value: float(np.mean(self.rmse[:, i] < reference))
            for i, m in enumerate(self.models)
            if m is not ModelKind.FLM
        }

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns split, model, rmse."""
        records = [
            {"split": s, "model": m.value, "rmse": float(self.rmse[s, i])}
            for s in range(self.n_splits)
            for i, m in enumerate(self.models)
        ]
        return pd.DataFrame.from_records(records, columns=["split", "model", "rmse"])


def _pair(values: Sequence[float]) -> Tuple[float, float]:
    return float(values[0]), float(values[1])


def _basis_to_dict(basis: MarginalBasis) -> Dict[str, Any]:
    return {
        "knots": basis.knots.knots.tolist(),
        "degree": basis.knots.degree,
        "domain": list(basis.knots.domain),
        "penalty_order": basis.penalty_order,
        "u_null": None if basis.u_null is None else basis.u_null.tolist(),
        "u_range": None if basis.u_range is None else basis.u_range.tolist(),
        "d_plus": None if basis.d_plus is None else basis.d_plus.tolist(),
    }


def _basis_from_dict(payload: Dict[str, Any]) -> MarginalBasis:
    knots = KnotVector(
        knots=np.asarray(payload["knots"], dtype=float),
        degree=int(payload["degree"]),
        domain=(float(payload["domain"][0]), float(payload["domain"][1])),
    )
    order = int(payload["penalty_order"])

    def optional(name: str) -> Optional[np.ndarray]:
        value = payload.get(name)
        return None if value is None else np.asarray(value, dtype=float)

    return MarginalBasis(
        knots=knots,
        evaluation=np.zeros((0, knots.n_basis)),
        penalty=scaled_penalty(knots, order),
        penalty_order=order,
        u_null=optional("u_null"),
        u_range=optional("u_range"),
        d_plus=optional("d_plus"),
    )


def _check_data(data: FunctionalDataset) -> np.ndarray:
    response = data.require_response()
    if data.n_curves < MIN_CURVES:
        raise ParameterError(
            f"Need more than {MIN_CURVES - 1} curves to fit, got {data.n_curves}"
        )
    return response


def data_quadrature(
    data: FunctionalDataset, rule: QuadratureRule
) -> QuadratureOperator:
    """Quadrature operator of a dataset for the given rule."""
    return quadrature_weights(data.n_curves, data.grid, rule, data.domain)


def build_t_basis(data: FunctionalDataset, kt: int) -> MarginalBasis:
    """Split cubic t basis with K_t functions over the time domain."""
    knots = make_knots(data.domain, kt)  # type: ignore[arg-type]
    return marginal_mixed_transform(build_marginal_basis(knots, data.times.ravel()))


def flm_blocks(
    data: FunctionalDataset, t_basis: MarginalBasis, quad: QuadratureOperator
) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed block L [1 : x : x*t] and Z1 = L (x [] Z_t) of new curves."""
    x = data.predictors.ravel()
    t = data.times.ravel()
    _, zt = t_basis.transform_at(t)
    fixed = quad.apply(np.column_stack([np.ones_like(x), x, x * t]))
    return fixed, quad.apply(box_product(x, zt))


def _psanova_fit(
    model: ModelKind,
    data: FunctionalDataset,
    lmm_fit: VarianceComponentFit,
    spec: MixedModelSpec,
    x_basis: Optional[MarginalBasis],
    t_basis: MarginalBasis,
    rule: QuadratureRule,
    fit_warnings: Sequence[str] = (),
) -> FgamFit:
    names = ("b1", "b2", "b3")
    coefficients = {"beta": lmm_fit.beta}
    variances = {"sigma2_e": lmm_fit.sigma2_e}
    for index, name in enumerate(names):
        if index < len(lmm_fit.blups):
            coefficients[name] = lmm_fit.blups[index]
            variances[f"sigma2_{index + 1}"] = lmm_fit.sigma2[index]
        else:
            coefficients[name] = np.zeros(0)
    warnings = list(fit_warnings)
    if lmm_fit.residual_floored:
        warnings.append("Residual variance was floored")
    return FgamFit(
        model=model,
        parameterization=Parameterization.PSANOVA,
        coefficients=coefficients,
        variance_components=variances,
        criterion=lmm_fit.criterion,
        x_basis=x_basis,
        t_basis=t_basis,
        quadrature_rule=rule,
        t_domain=data.domain,  # type: ignore[arg-type]
        x_range=data.x_range,
        fitted_values=lmm_fit.fitted_values(spec),
        warnings=tuple(warnings),
    )


def fit_fgamm(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    method: EstimationMethod = EstimationMethod.REML,
    options: Optional[FitOptions] = None,
) -> FgamFit:
    """Fit the FGAM as a three-component PS-ANOVA mixed model.

    An unconverged variance search keeps its best iterate and records a
    warning on the fit.

    Args:
        data: Dense dataset with responses
        kx: Number of x basis functions
        kt: Number of t basis functions
        quad: Quadrature rule
        method: REML (default) or ML
        options: Optimizer controls

    Returns:
        Fitted FGAMM

    Raises:
        ParameterError: If there are too few curves
        DegenerateDesignError: If the predictor curves are (near-)constant
    """
    response = _check_data(data)
    design = build_psanova_design(data, kx, kt, data_quadrature(data, quad))
    spec = MixedModelSpec(response, design.fixed, tuple(design.random_blocks))
    warnings: List[str] = []
    lmm_fit = fit_with_fallback(spec, warnings, method, options)
    logger.info(
        "FGAMM fit: sigma2_e=%.4g sigma2=%s",
        lmm_fit.sigma2_e,
        np.array2string(np.asarray(lmm_fit.sigma2), precision=4),
    )
    return _psanova_fit(
        ModelKind.FGAMM,
        data,
        lmm_fit,
        spec,
        design.x_basis,
        design.t_basis,
        quad,
        warnings,
    )


def fit_flm(
    data: FunctionalDataset,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    method: EstimationMethod = EstimationMethod.REML,
    options: Optional[FitOptions] = None,
) -> FgamFit:
    """Fit the functional linear model as a one-component mixed model.

    The coefficient function is ``beta_1 + beta_2 t + Z_t(t) b_1`` with the
    smooth part ``b_1`` as the random effect.

    Args:
        data: Dense dataset with responses
        kt: Number of t basis functions
        quad: Quadrature rule
        method: REML (default) or ML
        options: Optimizer controls

    Returns:
        Fitted FLM
    """
    response = _check_data(data)
    t_basis = build_t_basis(data, kt)
    fixed, z1 = flm_blocks(data, t_basis, data_quadrature(data, quad))
    spec = MixedModelSpec(response, fixed, (z1,))
    warnings: List[str] = []
    lmm_fit = fit_with_fallback(spec, warnings, method, options)
    return _psanova_fit(
        ModelKind.FLM, data, lmm_fit, spec, None, t_basis, quad, warnings
    )


def _tensor_fit(
    model: ModelKind,
    data: FunctionalDataset,
    design: TensorDesign,
    lambda_x: float,
    lambda_t: float,
    criterion: float,
    rule: QuadratureRule,
    warnings: Sequence[str] = (),
) -> FgamFit:
    response = data.require_response()
    penalty = design.penalty(lambda_x, lambda_t)
    theta, fitted, edf = penalized_least_squares(design.model_matrix, response, penalty)
    residual = response - fitted
    # the null space of S does not depend on the (positive) smoothing parameters
    u_null, _, _ = split_penalty(design.penalty(1.0, 1.0), design.null_dimension)
    return FgamFit(
        model=model,
        parameterization=Parameterization.TENSOR,
        coefficients={"theta": theta},
        variance_components={
            "lambda_x": float(lambda_x),
            "lambda_t": float(lambda_t),
            "sigma2_e": float(residual @ residual) / max(data.n_curves - edf, 1.0),
        },
        criterion=float(criterion),
        x_basis=design.x_basis,
        t_basis=design.t_basis,
        quadrature_rule=rule,
        t_domain=data.domain,  # type: ignore[arg-type]
        x_range=data.x_range,
        fitted_values=fitted,
        edf=edf,
        u_null=u_null,
        warnings=tuple(warnings),
    )


def fit_fgam_fixed(
    data: FunctionalDataset,
    kx: int,
    kt: int,
    quad: QuadratureRule,
    lambda_x: float,
    lambda_t: float,
) -> FgamFit:
    """Tensor-product FGAM at given smoothing parameters.

    Raises:
        ParameterError: If a smoothing parameter is not positive
    """
    _check_data(data)
    if lambda_x <= 0 or lambda_t <= 0:
        raise ParameterError(
            f"Smoothing parameters must be positive, got ({lambda_x}, {lambda_t})"
        )
    design = build_tensor_design(data, kx, kt, data_quadrature(data, quad))
    score = _TensorCriteria(design, data.require_response()).gcv(lambda_x, lambda_t)
    return _tensor_fit(
        ModelKind.FGAM_GCV, data, design, lambda_x, lambda_t, score, quad
    )


class _TensorCriteria:
    """Cross products of a tensor design reused across smoothing parameters."""

    def __init__(self, design: TensorDesign, response: np.ndarray) -> None:
        m = design.model_matrix
        self.n = int(m.shape[0])
        self.null_dim = design.null_dimension
        self.gram = m.T @ m
        self.mty = m.T @ response
        self.yty = float(response @ response)
        self.pen_x = np.kron(design.x_basis.penalty, design.gram_t)
        self.pen_t = np.kron(design.gram_x, design.t_basis.penalty)

    def _solve(
        self, lambda_x: float, lambda_t: float
    ) -> Tuple[Any, np.ndarray, np.ndarray]:
        penalty = lambda_x * self.pen_x + lambda_t * self.pen_t
        factor = scipy.linalg.cho_factor(self.gram + penalty, lower=True)
        return factor, scipy.linalg.cho_solve(factor, self.mty), penalty

    def gcv(self, lambda_x: float, lambda_t: float) -> float:
        """N RSS / (N - tr H)^2; infinite when tr H >= N or unsolvable."""
        try:
            factor, theta, _ = self._solve(lambda_x, lambda_t)
        except np.linalg.LinAlgError:
            return float("inf")
        fit_term = float(theta @ self.gram @ theta)
        rss = self.yty - 2.0 * float(theta @ self.mty) + fit_term
        edf = float(np.trace(scipy.linalg.cho_solve(factor, self.gram)))
        if edf >= self.n:
            return float("inf")
        return self.n * max(rss, 0.0) / (self.n - edf) ** 2

    def neg2_reml(self, lambda_x: float, lambda_t: float) -> float:
        """-2 restricted log-likelihood with the residual variance profiled."""
        try:
            factor, theta, penalty = self._solve(lambda_x, lambda_t)
        except np.linalg.LinAlgError:
            return float("inf")
        dof = self.n - self.null_dim
        deviance = max(self.yty - float(theta @ self.mty), 1e-300)
        logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
        eigenvalues = np.linalg.eigvalsh(penalty)[self.null_dim :]
        if np.any(eigenvalues <= 0):
            return float("inf")
        return float(
            dof * (1.0 + np.log(2.0 * np.pi * deviance / dof))
            + logdet
            - np.sum(np.log(eigenvalues))
        )


def _grid_search(
    score: Callable[[float, float], float], log_x: np.ndarray, log_t: np.ndarray
) -> Tuple[int, int, float]:
    values = np.array([[score(10.0**a, 10.0**b) for b in log_t] for a in log_x])
    i, j = np.unravel_index(int(np.argmin(values)), values.shape)
    return int(i), int(j), float(values[i, j])


def fit_fgam_gcv(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
) -> FgamFit:
    """Tensor-product FGAM with (lx, lt) minimizing GCV.

    A 21 x 21 log-uniform grid over [1e-4, 1e8] is searched and refined once
    with a second 21 x 21 grid spanning one coarse step around the minimizer.

    Raises:
        NumericalError: If tr(H) >= N at every grid point
    """
    response = _check_data(data)
    design = build_tensor_design(data, kx, kt, data_quadrature(data, quad))
    criteria = _TensorCriteria(design, response)

    coarse = np.linspace(*GCV_LOG10_RANGE, GCV_GRID_SIZE)
    i, j, best = _grid_search(criteria.gcv, coarse, coarse)
    if not np.isfinite(best):
        raise NumericalError(
            "GCV is undefined on the whole grid: tr(H) >= N",
            details={"n_obs": criteria.n},
        )
    warnings = []
    edge = GCV_GRID_SIZE - 1
    if i in (0, edge) or j in (0, edge):
        message = (
            f"GCV minimizer on the grid boundary at "
            f"(lambda_x, lambda_t) = (1e{coarse[i]:.1f}, 1e{coarse[j]:.1f})"
        )
        logger.warning(message)
        warnings.append(message)

    step = coarse[1] - coarse[0]
    fine_x = np.linspace(coarse[i] - step, coarse[i] + step, GCV_GRID_SIZE)
    fine_t = np.linspace(coarse[j] - step, coarse[j] + step, GCV_GRID_SIZE)
    fi, fj, fine_best = _grid_search(criteria.gcv, fine_x, fine_t)
    if fine_best <= best:
        log_x, log_t = fine_x[fi], fine_t[fj]
    else:
        log_x, log_t = coarse[i], coarse[j]
    logger.info("GCV selected lambda_x=%.3g lambda_t=%.3g", 10.0**log_x, 10.0**log_t)
    return _tensor_fit(
        ModelKind.FGAM_GCV,
        data,
        design,
        10.0**log_x,
        10.0**log_t,
        min(best, fine_best),
        quad,
        warnings,
    )


def fit_fgam_reml(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    options: Optional[FitOptions] = None,
) -> FgamFit:
    """Tensor-product FGAM with (lx, lt) maximizing the restricted likelihood.

    Nelder-Mead on (log lx, log lt) with the starting points and iteration cap
    of the mixed-model fitter.
    """
    options = options or FitOptions()
    response = _check_data(data)
    design = build_tensor_design(data, kx, kt, data_quadrature(data, quad))
    criteria = _TensorCriteria(design, response)
    low, high = LOG_RATIO_BOUNDS

    def objective(theta: np.ndarray) -> float:
        lx, lt = np.exp(np.clip(theta, low, high))
        return criteria.neg2_reml(float(lx), float(lt))

    results = []
    for start_value in options.start_ratios:
        start = np.full(2, np.log(start_value))
        results.append(
            minimize(
                objective,
                start,
                method="Nelder-Mead",
                options={
                    "maxiter": options.max_iter,
                    "initial_simplex": np.vstack([start, start + np.eye(2)]),
                },
            )
        )
    best = min(results, key=lambda r: r.fun)
    if not np.isfinite(best.fun):
        raise NumericalError("Restricted likelihood is undefined at every start")
    lx, lt = np.exp(np.clip(best.x, low, high))
    warnings = []
    if not best.success:
        message = "REML smoothing-parameter search did not converge"
        logger.warning(message)
        warnings.append(message)
    return _tensor_fit(
        ModelKind.FGAM_REML,
        data,
        design,
        float(lx),
        float(lt),
        -0.5 * float(best.fun),
        quad,
        warnings,
    )


def fit_model(
    model: ModelKind,
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    options: Optional[FitOptions] = None,
) -> FgamFit:
    """Fit any of the supported models by kind."""
    if model is ModelKind.FLM:
        return fit_flm(data, kt, quad, options=options)
    if model is ModelKind.FGAMM:
        return fit_fgamm(data, kx, kt, quad, options=options)
    if model is ModelKind.FGAM_GCV:
        return fit_fgam_gcv(data, kx, kt, quad)
    return fit_fgam_reml(data, kx, kt, quad, options)


def _range_warnings(fit: FgamFit, data: FunctionalDataset) -> List[str]:
    warnings = []
    low, high = fit.x_range
    tol = DOMAIN_RTOL * (high - low)
    values = data.predictors
    outside = int(np.sum((values < low - tol) | (values > high + tol)))
    if outside and fit.x_basis is not None:
        warnings.append(
            f"{outside} predictor value(s) outside the training range "
            f"[{low:g}, {high:g}] were clamped"
        )
    return warnings


def predict(fit: FgamFit, newdata: FunctionalDataset) -> Prediction:
    """Predicted means for new curves.

    The quadrature weights are re-derived for the grid of ``newdata`` with
    the rule of the fit; predictor values outside the training range are
    clamped to it.

    Args:
        fit: Fitted model
        newdata: Curves to predict (responses ignored)

    Returns:
        Predictions with clamping warnings

    Raises:
        DomainError: If the new time domain is not inside the training one
    """
    a, b = fit.t_domain
    c, d = newdata.domain  # type: ignore[misc]
    tol = DOMAIN_RTOL * (b - a)
    if c < a - tol or d > b + tol:
        raise DomainError(
            f"Time domain [{c}, {d}] is not inside the training domain [{a}, {b}]"
        )
    warnings = _range_warnings(fit, newdata)
    quad = quadrature_weights(
        newdata.n_curves, newdata.grid, fit.quadrature_rule, newdata.domain
    )
    coef = fit.coefficients
    if fit.parameterization is Parameterization.TENSOR:
        assert fit.x_basis is not None
        matrix = tensor_design_from_bases(
            newdata, fit.x_basis, fit.t_basis, quad, clamp=True
        )
        values = matrix @ coef["theta"]
    elif fit.x_basis is None:
        fixed, z1 = flm_blocks(newdata, fit.t_basis, quad)
        values = fixed @ coef["beta"] + z1 @ coef["b1"]
    else:
        design = psanova_design_from_bases(
            newdata, fit.x_basis, fit.t_basis, quad, clamp=True
        )
        values = design.fixed @ coef["beta"]
        for z, name in zip(design.random_blocks, ("b1", "b2", "b3")):
            values = values + z @ coef[name]
    return Prediction(values=values, warnings=warnings)


def evaluate_surface(
    fit: FgamFit,
    x_grid: Optional[np.ndarray] = None,
    t_grid: Optional[np.ndarray] = None,
    n_points: int = DEFAULT_SURFACE_GRID,
) -> SurfaceDecomposition:
    """Evaluate the estimated surface and its components on a grid.

    PS-ANOVA fits split into the parametric part ``b0 + b1 x + b2 x t``, the
    x-linear/t-smooth part, the x-smooth/t-parametric part and the fully
    smooth interaction; tensor fits split into penalty null space and range
    space.

    Args:
        fit: Fitted model
        x_grid: Predictor values; defaults to ``n_points`` over the training range
        t_grid: Times; defaults to ``n_points`` over the time domain
        n_points: Default grid size per axis

    Returns:
        Surface decomposition
    """
    if x_grid is None:
        xs = np.linspace(*fit.x_range, n_points)
    else:
        xs = np.asarray(x_grid, dtype=float)
    if t_grid is None:
        ts = np.linspace(*fit.t_domain, n_points)
    else:
        ts = np.asarray(t_grid, dtype=float)
    xx, tt = np.meshgrid(xs, ts, indexing="ij")
    x, t = xx.ravel(), tt.ravel()
    shape = xx.shape
    coef = fit.coefficients

    components: Dict[str, np.ndarray] = {}
    if fit.parameterization is Parameterization.TENSOR:
        assert fit.x_basis is not None and fit.u_null is not None
        basis = box_product(
            eval_basis(fit.x_basis.knots, x, clamp=True),
            eval_basis(fit.t_basis.knots, t, clamp=True),
        )
        theta = coef["theta"]
        null_theta = fit.u_null @ (fit.u_null.T @ theta)
        components["null_space"] = (basis @ null_theta).reshape(shape)
        components["range_space"] = (basis @ (theta - null_theta)).reshape(shape)
        return SurfaceDecomposition(xs, ts, components)

    beta = coef["beta"]
    _, zt = fit.t_basis.transform_at(t, clamp=True)
    components["parametric"] = (beta[0] + beta[1] * x + beta[2] * x * t).reshape(shape)
    components["linear_x_smooth_t"] = (box_product(x, zt) @ coef["b1"]).reshape(shape)
    if fit.x_basis is None:
        components["smooth_x_parametric_t"] = np.zeros(shape)
        components["smooth_xt"] = np.zeros(shape)
    else:
        _, zx = fit.x_basis.transform_at(x, clamp=True)
        xt = np.column_stack([np.ones_like(t), t])
        components["smooth_x_parametric_t"] = (
            box_product(zx, xt) @ coef["b2"]
        ).reshape(shape)
        components["smooth_xt"] = (box_product(zx, zt) @ coef["b3"]).reshape(shape)
    return SurfaceDecomposition(xs, ts, components)


def compare_prediction(
    data: FunctionalDataset,
    models: Sequence[ModelKind] = (ModelKind.FLM, ModelKind.FGAMM),
    n_splits: int = N_SPLITS,
    train_fraction: float = TRAIN_FRACTION,
    seed: int = DEFAULT_SEED,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    threads: int = 1,
) -> PredictionComparison:
    """Compare held-out RMSE over repeated random train/test splits.

    Split s permutes the curves with the generator of ``(seed, s)``; the FLM
    is always included as the reference model.

    Args:
        data: Dataset with responses
        models: Models to compare
        n_splits: Number of random splits
        train_fraction: Share of curves used for fitting, in (0, 1)
        seed: Seed of the split streams
        kx: Number of x basis functions
        kt: Number of t basis functions
        quad: Quadrature rule
        threads: Worker threads

    Returns:
        Comparison with one RMSE per split and model
    """
    response = data.require_response()
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n_splits < 1:
        raise ParameterError(f"n_splits must be positive, got {n_splits}")
    kinds = tuple(dict.fromkeys((ModelKind.FLM, *models)))
    n_train = int(round(train_fraction * data.n_curves))
    if n_train < MIN_CURVES or n_train >= data.n_curves:
        raise ParameterError(
            f"A training share of {train_fraction:.3f} leaves {n_train} of "
            f"{data.n_curves} curves for fitting"
        )

    def run_split(split: int) -> np.ndarray:
        order = rng_for(seed, split).permutation(data.n_curves)
        train, test = data.subset(order[:n_train]), data.subset(order[n_train:])
        errors = np.full(len(kinds), np.nan)
        for index, kind in enumerate(kinds):
            try:
                fit = fit_model(kind, train, kx, kt, quad)
            except FgamError as e:
                logger.warning("Split %d: %s fit failed: %s", split, kind.value, e)
                continue
            predicted = predict(fit, test).values
            errors[index] = float(
                np.sqrt(np.mean((response[order[n_train:]] - predicted) ** 2))
            )
        return errors

    rmse = np.vstack(parallel_map(run_split, range(n_splits), threads))
    return PredictionComparison(
        models=kinds, rmse=rmse, train_fraction=float(train_fraction), seed=int(seed)
    )
