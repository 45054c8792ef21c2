"""Functional generalized additive models and tests of the functional linear model."""

from .config import Settings
from .design import (
    PsAnovaDesign,
    QuadratureOperator,
    TensorDesign,
    box_product,
    build_psanova_design,
    build_tensor_design,
    quadrature_weights,
)
from .enums import (
    EstimationMethod,
    ModelKind,
    Parameterization,
    QuadratureRule,
    Scenario,
    ScoreScale,
    TestMethod,
)
from .exceptions import (
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
from .fgam import (
    FgamFit,
    Prediction,
    PredictionComparison,
    SurfaceDecomposition,
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
from .hypothesis import (
    TestResult,
    run_test,
    test_knownsig1,
    test_linear_in_t,
    test_linearity_bonferroni,
    test_linearity_bootstrap,
    test_linearity_equalvc,
    test_no_effect,
)
from .io import DataBundle, load_bundle, load_study_config, write_bundle
from .lmm import (
    FitOptions,
    MixedModelSpec,
    VarianceComponentFit,
    fit_mixed_model,
    fit_with_fallback,
)
from .models import FunctionalDataset
from .rlrt import (
    RlrtNullSample,
    pseudo_response,
    pvalue_from_null,
    rlrt_statistic,
    simulate_rlrt_null,
)
from .sim import (
    RejectionTable,
    StudyConfig,
    gen_predictors,
    gen_response_convex,
    gen_response_mixed,
    run_rejection_study,
)
from .splines import MarginalBasis, build_marginal_basis, eval_basis, make_knots

__version__ = "0.3.0"
__all__ = [
    # Data models
    "FunctionalDataset",
    "DataBundle",
    "MarginalBasis",
    "QuadratureOperator",
    "TensorDesign",
    "PsAnovaDesign",
    "MixedModelSpec",
    "VarianceComponentFit",
    "FgamFit",
    "Prediction",
    "SurfaceDecomposition",
    "PredictionComparison",
    "RlrtNullSample",
    "TestResult",
    "StudyConfig",
    "RejectionTable",
    "Settings",
    "FitOptions",
    # Basis and design construction
    "make_knots",
    "eval_basis",
    "build_marginal_basis",
    "box_product",
    "quadrature_weights",
    "build_tensor_design",
    "build_psanova_design",
    # Fitting and prediction
    "fit_mixed_model",
    "fit_with_fallback",
    "fit_fgamm",
    "fit_flm",
    "fit_fgam_fixed",
    "fit_fgam_gcv",
    "fit_fgam_reml",
    "fit_model",
    "predict",
    "evaluate_surface",
    "compare_prediction",
    # Tests
    "rlrt_statistic",
    "simulate_rlrt_null",
    "pseudo_response",
    "pvalue_from_null",
    "test_linearity_equalvc",
    "test_linearity_bonferroni",
    "test_linearity_bootstrap",
    "test_knownsig1",
    "test_no_effect",
    "test_linear_in_t",
    "run_test",
    # Simulation and I/O
    "gen_predictors",
    "gen_response_convex",
    "gen_response_mixed",
    "run_rejection_study",
    "load_bundle",
    "write_bundle",
    "load_study_config",
    # Enums
    "QuadratureRule",
    "EstimationMethod",
    "Parameterization",
    "ModelKind",
    "TestMethod",
    "Scenario",
    "ScoreScale",
    # Exceptions
    "FgamError",
    "ParameterError",
    "ShapeError",
    "CapacityError",
    "DomainError",
    "DataError",
    "ConfigError",
    "NumericalError",
    "DegenerateDesignError",
    "ConvergenceError",
]
