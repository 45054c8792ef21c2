"""Tests of linearity, of no effect and of a linear-in-t effect.

Linearity of the FGAM surface in x is the hypothesis ``s_2 = s_3 = 0`` in
the PS-ANOVA mixed model, with ``s_1`` a nuisance component. The nuisance
effect is removed through its BLUP (pseudo-RLRT) and the remaining
component is tested with the exact one-component RLRT machinery.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import (
    DEFAULT_INTERACTIVE_NSIM,
    DEFAULT_KT,
    DEFAULT_KX,
    DEFAULT_NBOOT,
    DEFAULT_QUADRATURE,
    DEFAULT_SEED,
)
from .design import PsAnovaDesign, build_psanova_design
from .enums import EstimationMethod, QuadratureRule, TestMethod
from .exceptions import ConvergenceError, FgamError, ParameterError, ShapeError
from .fgam import build_t_basis, data_quadrature, flm_blocks
from .lmm import (
    MixedModelSpec,
    VarianceComponentFit,
    fit_mixed_model,
    fit_with_fallback,
)
from .models import FunctionalDataset
from .rlrt import (
    pseudo_response,
    pvalue_from_null,
    pvalue_from_sample,
    rlrt_statistic_with_ratio,
    simulate_rlrt_null,
    summarize_null,
)
from .streams import derive_seed, parallel_map, rng_for

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
MAX_FAILURE_RATE = 0.05
MIN_NBOOT = 500


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test.

    Args:
        method: Procedure that produced the result
        statistic: Headline statistic (the larger one for two-test procedures)
        p_value: Reported p-value (Bonferroni-adjusted where applicable)
        alpha: Level of the decision
        nsim: Null draws or bootstrap samples per null distribution
        seed: Seed of the null simulation
        components: Variance components or coefficients tested
        statistics: Statistic per tested component
        p_values: Unadjusted p-value per tested component
        null_summary: Zero mass and upper quantiles per null distribution
        diagnostics: Estimates under the alternative and fit flags
        failures: Failed bootstrap refits
        warnings: Warnings raised while testing
    """

    __test__ = False

    method: TestMethod
    statistic: float
    p_value: float
    alpha: float
    nsim: int
    seed: int
    components: Tuple[str, ...]
    statistics: Dict[str, float] = field(default_factory=dict)
    p_values: Dict[str, float] = field(default_factory=dict)
    null_summary: Dict[str, Dict[str, float]] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    failures: int = 0
    warnings: Tuple[str, ...] = ()

    @property
    def reject(self) -> bool:
        """Whether the null hypothesis is rejected at ``alpha``."""
        return self.p_value <= self.alpha

    @property
    def unreliable(self) -> bool:
        """Whether more than 5% of the bootstrap refits failed."""
        return self.failures > MAX_FAILURE_RATE * max(self.nsim, 1)

    def decision(self, alpha: float) -> bool:
        """Rejection decision at another level."""
        return self.p_value <= alpha

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready representation."""
        return {
            "method": self.method.value,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "nsim": self.nsim,
            "seed": self.seed,
            "components": list(self.components),
            "statistics": dict(self.statistics),
            "p_values": dict(self.p_values),
            "null_summary": {k: dict(v) for k, v in self.null_summary.items()},
            "diagnostics": dict(self.diagnostics),
            "failures": self.failures,
            "unreliable": self.unreliable,
            "warnings": list(self.warnings),
        }


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")


def _reml_fit(spec: MixedModelSpec, warnings: List[str]) -> VarianceComponentFit:
    return fit_with_fallback(spec, warnings, EstimationMethod.REML)


def _variance_diagnostics(
    fit: VarianceComponentFit, names: Tuple[str, ...]
) -> Dict[str, Any]:
    result: Dict[str, Any] = {"sigma2_e": fit.sigma2_e}
    for name, value in zip(names, fit.sigma2):
        result[name] = value
    result["converged"] = fit.converged
    result["all_variances_zero"] = bool(all(v == 0.0 for v in fit.sigma2))
    return result


def _one_component(
    response: np.ndarray,
    fixed: np.ndarray,
    random: np.ndarray,
    nsim: int,
    seed: int,
    threads: int,
) -> Tuple[float, float, float, Dict[str, float]]:
    """Statistic, REML ratio, p-value and null summary of one RLRT."""
    statistic, ratio = rlrt_statistic_with_ratio(response, fixed, random)
    null = simulate_rlrt_null(fixed, random, nsim, seed, threads)
    return statistic, ratio, pvalue_from_null(statistic, null), null.summary()


def _psanova(
    data: FunctionalDataset, kx: int, kt: int, quad: QuadratureRule
) -> Tuple[PsAnovaDesign, np.ndarray]:
    response = data.require_response()
    return build_psanova_design(data, kx, kt, data_quadrature(data, quad)), response


def test_linearity_equalvc(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> TestResult:
    """Linearity test assuming equal non-linear variance components.

    Z2 and Z3 are merged into Z23 = [Z2 : Z3] with one variance s_23^2.
    The full model (X, Z1, Z23) is fitted by REML, Z1 b1 is removed from y
    and ``s_23^2 = 0`` is tested by the one-component RLRT.

    Args:
        data: Dense dataset with responses
        kx: Number of x basis functions
        kt: Number of t basis functions
        nsim: Null draws
        seed: Seed of the null simulation
        quad: Quadrature rule
        alpha: Test level
        threads: Worker threads

    Returns:
        Test result for the merged component
    """
    _check_alpha(alpha)
    design, response = _psanova(data, kx, kt, quad)
    warnings: List[str] = []
    spec = MixedModelSpec(response, design.fixed, (design.z1, design.z_nonlinear))
    fit = _reml_fit(spec, warnings)
    pseudo = pseudo_response(fit, spec, 0)
    statistic, ratio, p_value, summary = _one_component(
        pseudo, design.fixed, design.z_nonlinear, nsim, seed, threads
    )
    diagnostics = _variance_diagnostics(fit, ("sigma2_1", "sigma2_23"))
    diagnostics["pseudo_ratio"] = ratio
    return TestResult(
        method=TestMethod.EQUALVC,
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        nsim=nsim,
        seed=seed,
        components=("sigma2_23",),
        statistics={"sigma2_23": statistic},
        p_values={"sigma2_23": p_value},
        null_summary={"sigma2_23": summary},
        diagnostics=diagnostics,
        warnings=tuple(warnings),
    )


def _two_tests(
    method: TestMethod,
    pseudo_2: np.ndarray,
    pseudo_3: np.ndarray,
    design: PsAnovaDesign,
    nsim: int,
    seed: int,
    alpha: float,
    threads: int,
    diagnostics: Dict[str, Any],
    warnings: List[str],
) -> TestResult:
    """Bonferroni combination of the RLRTs of s_2 (b3 = 0) and s_3 (b2 = 0)."""
    statistics: Dict[str, float] = {}
    p_values: Dict[str, float] = {}
    summaries: Dict[str, Dict[str, float]] = {}
    for name, pseudo, block, key in (
        ("sigma2_2", pseudo_2, design.z2, 2),
        ("sigma2_3", pseudo_3, design.z3, 3),
    ):
        statistic, ratio, p_value, summary = _one_component(
            pseudo, design.fixed, block, nsim, derive_seed(seed, key), threads
        )
        statistics[name] = statistic
        p_values[name] = p_value
        summaries[name] = summary
        diagnostics[f"pseudo_ratio_{key}"] = ratio
    adjusted = min(1.0, 2.0 * min(p_values.values()))
    return TestResult(
        method=method,
        statistic=max(statistics.values()),
        p_value=adjusted,
        alpha=alpha,
        nsim=nsim,
        seed=seed,
        components=("sigma2_2", "sigma2_3"),
        statistics=statistics,
        p_values=p_values,
        null_summary=summaries,
        diagnostics=diagnostics,
        warnings=tuple(warnings),
    )


def test_linearity_bonferroni(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
    share_nuisance_fit: bool = True,
) -> TestResult:
    """Linearity test as two pseudo-RLRTs with a Bonferroni correction.

    Rejects when the smaller of the two p-values is at most alpha / 2; the
    reported p-value is ``min(1, 2 min(p_2, p_3))``.

    Args:
        data: Dense dataset with responses
        kx: Number of x basis functions
        kt: Number of t basis functions
        nsim: Null draws per sub-test
        seed: Seed of the null simulations
        quad: Quadrature rule
        alpha: Test level
        threads: Worker threads
        share_nuisance_fit: Take the nuisance BLUP from one fit of the full
            three-block model; otherwise refit (X, Z1, Z2) and (X, Z1, Z3)
            for the two sub-tests

    Returns:
        Test result with both sub-test p-values
    """
    _check_alpha(alpha)
    design, response = _psanova(data, kx, kt, quad)
    warnings: List[str] = []
    if share_nuisance_fit:
        spec = MixedModelSpec(response, design.fixed, tuple(design.random_blocks))
        fit = _reml_fit(spec, warnings)
        pseudo_2 = pseudo_3 = pseudo_response(fit, spec, 0)
        diagnostics = _variance_diagnostics(fit, ("sigma2_1", "sigma2_2", "sigma2_3"))
    else:
        spec_2 = MixedModelSpec(response, design.fixed, (design.z1, design.z2))
        spec_3 = MixedModelSpec(response, design.fixed, (design.z1, design.z3))
        fit_2 = _reml_fit(spec_2, warnings)
        fit_3 = _reml_fit(spec_3, warnings)
        pseudo_2 = pseudo_response(fit_2, spec_2, 0)
        pseudo_3 = pseudo_response(fit_3, spec_3, 0)
        diagnostics = {
            "model_2": _variance_diagnostics(fit_2, ("sigma2_1", "sigma2_2")),
            "model_3": _variance_diagnostics(fit_3, ("sigma2_1", "sigma2_3")),
        }
    diagnostics["share_nuisance_fit"] = share_nuisance_fit
    return _two_tests(
        TestMethod.BONFERRONI,
        pseudo_2,
        pseudo_3,
        design,
        nsim,
        seed,
        alpha,
        threads,
        diagnostics,
        warnings,
    )


def test_knownsig1(
    data: FunctionalDataset,
    true_b1: np.ndarray,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> TestResult:
    """Bonferroni linearity test with the true nuisance effect removed.

    Only usable on simulated data where ``b1`` is known.

    Raises:
        ShapeError: If ``true_b1`` does not have K_t - 2 entries
    """
    _check_alpha(alpha)
    design, response = _psanova(data, kx, kt, quad)
    b1 = np.asarray(true_b1, dtype=float).ravel()
    if b1.size != design.z1.shape[1]:
        raise ShapeError(
            f"true_b1 has {b1.size} entries, the design needs {design.z1.shape[1]}"
        )
    pseudo = response - design.z1 @ b1
    return _two_tests(
        TestMethod.KNOWNSIG1,
        pseudo,
        pseudo,
        design,
        nsim,
        seed,
        alpha,
        threads,
        {},
        [],
    )


def _simulate_from(
    fit: VarianceComponentFit, spec: MixedModelSpec, rng: np.random.Generator
) -> np.ndarray:
    """Draw a response from a fitted Gaussian mixed model."""
    response = spec.fixed @ fit.beta
    for z, variance in zip(spec.blocks, fit.sigma2):
        response = response + z @ (np.sqrt(variance) * rng.standard_normal(z.shape[1]))
    return response + np.sqrt(fit.sigma2_e) * rng.standard_normal(spec.n_obs)


def _likelihood_ratio(
    null_spec: MixedModelSpec,
    alt_spec: MixedModelSpec,
    method: EstimationMethod,
) -> Tuple[float, VarianceComponentFit, VarianceComponentFit]:
    null_fit = fit_mixed_model(null_spec, method)
    alt_fit = fit_mixed_model(alt_spec, method)
    statistic = max(2.0 * (alt_fit.criterion - null_fit.criterion), 0.0)
    return statistic, null_fit, alt_fit


def _bootstrap_null(
    null_fit: VarianceComponentFit,
    null_spec: MixedModelSpec,
    alt_spec: MixedModelSpec,
    method: EstimationMethod,
    nboot: int,
    seed: int,
    threads: int,
) -> Tuple[np.ndarray, int]:
    """Parametric bootstrap of the likelihood ratio under the fitted null."""

    def draw(index: int) -> Optional[float]:
        rng = rng_for(seed, index)
        response = _simulate_from(null_fit, null_spec, rng)
        try:
            statistic, _, _ = _likelihood_ratio(
                null_spec.with_response(response),
                alt_spec.with_response(response),
                method,
            )
        except FgamError as e:
            logger.debug("Bootstrap refit %d failed: %s", index, e)
            return None
        return statistic

    results = parallel_map(draw, range(nboot), threads)
    sample = np.sort(np.array([r for r in results if r is not None], dtype=float))
    failures = sum(r is None for r in results)
    if failures > MAX_FAILURE_RATE * nboot:
        logger.warning(
            "%d of %d bootstrap refits failed; the p-value is unreliable",
            failures,
            nboot,
        )
    return sample, failures


def test_linearity_bootstrap(
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    nboot: int = DEFAULT_NBOOT,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> TestResult:
    """Parametric-bootstrap REML likelihood ratio test of linearity.

    The FLM (X, Z1) is the null and (X, Z1, Z23) the alternative. Both are
    refitted on ``nboot`` responses simulated from the fitted null.

    Returns:
        Test result; ``unreliable`` is set when more than 5% of refits fail
    """
    _check_alpha(alpha)
    if nboot < MIN_NBOOT:
        logger.warning(
            "Bootstrap with %d samples; at least %d recommended", nboot, MIN_NBOOT
        )
    design, response = _psanova(data, kx, kt, quad)
    null_spec = MixedModelSpec(response, design.fixed, (design.z1,))
    alt_spec = MixedModelSpec(response, design.fixed, (design.z1, design.z_nonlinear))
    statistic, null_fit, alt_fit = _likelihood_ratio(
        null_spec, alt_spec, EstimationMethod.REML
    )
    sample, failures = _bootstrap_null(
        null_fit, null_spec, alt_spec, EstimationMethod.REML, nboot, seed, threads
    )
    if sample.size == 0:
        raise ConvergenceError("Every bootstrap refit failed")
    p_value = pvalue_from_sample(statistic, sample)
    warnings = []
    if failures > MAX_FAILURE_RATE * nboot:
        warnings.append(f"{failures} of {nboot} bootstrap refits failed")
    return TestResult(
        method=TestMethod.BOOTSTRAP,
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        nsim=nboot,
        seed=seed,
        components=("sigma2_23",),
        statistics={"sigma2_23": statistic},
        p_values={"sigma2_23": p_value},
        null_summary={"sigma2_23": summarize_null(sample)},
        diagnostics=_variance_diagnostics(alt_fit, ("sigma2_1", "sigma2_23")),
        failures=failures,
        warnings=tuple(warnings),
    )


def test_no_effect(
    data: FunctionalDataset,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> TestResult:
    """Test of no effect: ``beta_2 = beta_3 = 0`` and ``s_1 = 0`` in the FLM.

    The hypotheses differ in their fixed effects, so the statistic is the ML
    (not REML) likelihood ratio of the FLM against the intercept-only model;
    its null distribution is a parametric bootstrap from the null fit.

    Args:
        data: Dense dataset with responses
        kt: Number of t basis functions
        nsim: Bootstrap samples
        seed: Seed of the bootstrap streams
        quad: Quadrature rule
        alpha: Test level
        threads: Worker threads

    Returns:
        Test result
    """
    _check_alpha(alpha)
    response = data.require_response()
    quadrature = data_quadrature(data, quad)
    fixed, z1 = flm_blocks(data, build_t_basis(data, kt), quadrature)
    null_spec = MixedModelSpec(response, fixed[:, :1])
    alt_spec = MixedModelSpec(response, fixed, (z1,))
    statistic, null_fit, alt_fit = _likelihood_ratio(
        null_spec, alt_spec, EstimationMethod.ML
    )
    sample, failures = _bootstrap_null(
        null_fit, null_spec, alt_spec, EstimationMethod.ML, nsim, seed, threads
    )
    if sample.size == 0:
        raise ConvergenceError("Every bootstrap refit failed")
    p_value = pvalue_from_sample(statistic, sample)
    diagnostics = _variance_diagnostics(alt_fit, ("sigma2_1",))
    diagnostics["beta"] = alt_fit.beta.tolist()
    return TestResult(
        method=TestMethod.NO_EFFECT,
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        nsim=nsim,
        seed=seed,
        components=("beta_2", "beta_3", "sigma2_1"),
        statistics={"lrt": statistic},
        p_values={"lrt": p_value},
        null_summary={"lrt": summarize_null(sample)},
        diagnostics=diagnostics,
        failures=failures,
    )


def test_linear_in_t(
    data: FunctionalDataset,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> TestResult:
    """RLRT of ``s_1 = 0`` in the FLM: is beta(t) linear in t?

    The FLM has a single variance component, so the exact one-component
    null distribution applies without nuisance handling.
    """
    _check_alpha(alpha)
    response = data.require_response()
    quadrature = data_quadrature(data, quad)
    fixed, z1 = flm_blocks(data, build_t_basis(data, kt), quadrature)
    statistic, ratio, p_value, summary = _one_component(
        response, fixed, z1, nsim, seed, threads
    )
    return TestResult(
        method=TestMethod.LINEAR_IN_T,
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        nsim=nsim,
        seed=seed,
        components=("sigma2_1",),
        statistics={"sigma2_1": statistic},
        p_values={"sigma2_1": p_value},
        null_summary={"sigma2_1": summary},
        diagnostics={"ratio": ratio},
    )


def run_test(
    method: TestMethod,
    data: FunctionalDataset,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    nsim: int = DEFAULT_INTERACTIVE_NSIM,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
    true_b1: Optional[np.ndarray] = None,
) -> TestResult:
    """Dispatch to a test procedure by method tag.

    ``nsim`` is used as the bootstrap size for the bootstrap procedures.

    Raises:
        ParameterError: If KnownSig1 is requested without ``true_b1``
    """
    if method is TestMethod.EQUALVC:
        return test_linearity_equalvc(data, kx, kt, nsim, seed, quad, alpha, threads)
    if method is TestMethod.BONFERRONI:
        return test_linearity_bonferroni(
            data, kx, kt, nsim, seed, quad, alpha, threads
        )
    if method is TestMethod.BOOTSTRAP:
        return test_linearity_bootstrap(data, kx, kt, nsim, seed, quad, alpha, threads)
    if method is TestMethod.NO_EFFECT:
        return test_no_effect(data, kt, nsim, seed, quad, alpha, threads)
    if method is TestMethod.LINEAR_IN_T:
        return test_linear_in_t(data, kt, nsim, seed, quad, alpha, threads)
    if true_b1 is None:
        raise ParameterError("KnownSig1 needs the true nuisance effect b1")
    return test_knownsig1(data, true_b1, kx, kt, nsim, seed, quad, alpha, threads)


for _procedure in (
    test_linearity_equalvc,
    test_linearity_bonferroni,
    test_linearity_bootstrap,
    test_knownsig1,
    test_no_effect,
    test_linear_in_t,
):
    _procedure.__test__ = False  # type: ignore[attr-defined]
