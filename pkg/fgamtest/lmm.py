"""Gaussian linear mixed models with independent identity-covariance blocks.

The model is ``y = X beta + sum_j Z_j b_j + e`` with ``b_j ~ N(0, s_j^2 I)``
and ``e ~ N(0, s_e^2 I)``. Variance components are estimated by REML or ML
after profiling out ``beta`` and ``s_e^2``; only the variance ratios
``lambda_j = s_j^2 / s_e^2`` are optimized numerically.

All likelihood evaluations work on the q x q system
``M = I + D Z'Z D`` with ``D = diag(sqrt(lambda))``, so that
``V = I + Z diag(lambda) Z'`` never has to be formed and zero ratios are
handled without special cases.

The restricted log-likelihood carries the ``+ 1/2 log det(X'X)`` term, which
makes it invariant to reparameterizations of the fixed-effect columns.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .enums import EstimationMethod
from .exceptions import (
    ConvergenceError,
    DegenerateDesignError,
    NumericalError,
    ParameterError,
    ShapeError,
)

logger = logging.getLogger(__name__)

MAX_BLOCKS = 3
START_RATIOS = (1e-3, 1.0, 1e3)
ZERO_RATIO = 1e-8
LOG_RATIO_BOUNDS = (np.log(1e-10), np.log(1e10))
MAX_ITERATIONS = 500
CRITERION_TOL = 1e-9
RATIO_TOL = 1e-7
RESIDUAL_FLOOR = 1e-12
GRADIENT_TOL = 1e-3


@dataclass(frozen=True)
class FitOptions:
    """Nelder-Mead controls for the variance-ratio search.

    Args:
        max_iter: Iteration cap per start
        xatol: Absolute tolerance on the log ratios
        fatol: Absolute tolerance on the criterion
        start_ratios: Common starting ratio for every free block, one run each
    """

    max_iter: int = MAX_ITERATIONS
    xatol: float = RATIO_TOL
    fatol: float = CRITERION_TOL
    start_ratios: Tuple[float, ...] = START_RATIOS

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.xatol <= 0 or self.fatol <= 0:
            raise ParameterError("Optimizer tolerances must be positive")
        if not self.start_ratios or min(self.start_ratios) <= 0:
            raise ParameterError("start_ratios must be non-empty and positive")


@dataclass(frozen=True)
class MixedModelSpec:
    """Response, fixed-effect design and random-effect blocks.

    Args:
        response: N-vector y
        fixed: N x p fixed-effect design X of full column rank
        blocks: Up to three N x q_j random-effect designs Z_j
    """

    response: np.ndarray
    fixed: np.ndarray
    blocks: Tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        """Validate shapes and the rank of the fixed-effect design."""
        y = np.asarray(self.response, dtype=float).ravel()
        x = np.asarray(self.fixed, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        blocks = tuple(np.atleast_2d(np.asarray(z, dtype=float)) for z in self.blocks)
        if len(blocks) > MAX_BLOCKS:
            raise ParameterError(
                f"At most {MAX_BLOCKS} random-effect blocks are supported, "
                f"got {len(blocks)}"
            )
        if x.shape[0] != y.size:
            raise ShapeError(f"X has {x.shape[0]} rows but y has {y.size} entries")
        for index, z in enumerate(blocks):
            if z.shape[0] != y.size:
                raise ShapeError(
                    f"Block {index + 1} has {z.shape[0]} rows but y has "
                    f"{y.size} entries"
                )
        rank = int(np.linalg.matrix_rank(x))
        if rank < x.shape[1]:
            raise DegenerateDesignError(
                f"Fixed-effect design has rank {rank} < {x.shape[1]} columns",
                condition_number=float(np.linalg.cond(x)),
            )
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "fixed", x)
        object.__setattr__(self, "blocks", blocks)

    @property
    def n_obs(self) -> int:
        """Number of observations N."""
        return int(self.response.size)

    @property
    def n_fixed(self) -> int:
        """Number of fixed effects p."""
        return int(self.fixed.shape[1])

    @property
    def dims(self) -> Tuple[int, ...]:
        """Random-effect dimensions q_j."""
        return tuple(int(z.shape[1]) for z in self.blocks)

    @property
    def random_design(self) -> np.ndarray:
        """All random-effect blocks side by side."""
        if not self.blocks:
            return np.zeros((self.n_obs, 0))
        return np.hstack(self.blocks)

    def with_response(self, response: np.ndarray) -> "MixedModelSpec":
        """Return the same design with another response vector."""
        return MixedModelSpec(response=response, fixed=self.fixed, blocks=self.blocks)

    def select_blocks(self, indices: Sequence[int]) -> "MixedModelSpec":
        """Return the model restricted to the given random-effect blocks."""
        return MixedModelSpec(
            response=self.response,
            fixed=self.fixed,
            blocks=tuple(self.blocks[i] for i in indices),
        )


@dataclass(frozen=True)
class VarianceComponentFit:
    """Estimated mixed model.

    Args:
        method: REML or ML
        beta: Fixed-effect estimates
        blups: Predicted random effects, one vector per block
        sigma2_e: Residual variance
        sigma2: Random-effect variances, one per block
        criterion: Maximized log-likelihood (restricted for REML)
        iterations: Optimizer iterations summed over starts
        converged: Whether the optimizer met its tolerance
        boundary: Per block, whether the variance sits at zero
        gradient_norm: Criterion gradient norm over interior log-ratios
        residual_floored: Whether the residual variance was floored
    """

    method: EstimationMethod
    beta: np.ndarray
    blups: Tuple[np.ndarray, ...]
    sigma2_e: float
    sigma2: Tuple[float, ...]
    criterion: float
    iterations: int = 0
    converged: bool = True
    boundary: Tuple[bool, ...] = ()
    gradient_norm: float = 0.0
    residual_floored: bool = False

    @property
    def ratios(self) -> np.ndarray:
        """Variance ratios s_j^2 / s_e^2."""
        return np.asarray(self.sigma2) / self.sigma2_e

    def fitted_values(self, spec: MixedModelSpec) -> np.ndarray:
        """X beta + sum_j Z_j b_j for the fitted spec."""
        fitted = spec.fixed @ self.beta
        for z, b in zip(spec.blocks, self.blups):
            fitted = fitted + z @ b
        return fitted


class _CrossProducts:
    """Cached inner products of a spec used by every likelihood evaluation."""

    def __init__(self, spec: MixedModelSpec) -> None:
        z = spec.random_design
        x, y = spec.fixed, spec.response
        self.n = spec.n_obs
        self.p = spec.n_fixed
        self.dims = spec.dims
        self.ztz = z.T @ z
        self.ztx = z.T @ x
        self.zty = z.T @ y
        self.xtx = x.T @ x
        self.xty = x.T @ y
        self.yty = float(y @ y)
        self.logdet_xtx = float(np.linalg.slogdet(self.xtx)[1])
        variance = float(np.var(y))
        self.residual_floor = RESIDUAL_FLOOR * (variance if variance > 0 else 1.0)

    def scale(self, ratios: np.ndarray) -> np.ndarray:
        return np.repeat(np.sqrt(np.maximum(ratios, 0.0)), self.dims)


@dataclass
class _Evaluation:
    """Profiled likelihood pieces at one set of variance ratios."""

    loglik: float
    sigma2_e: float
    beta: np.ndarray
    rvr: float
    logdet_v: float
    logdet_xvx: float
    scale: np.ndarray
    m_factor: Tuple[np.ndarray, bool]
    xvx_factor: Tuple[np.ndarray, bool]
    ztr: np.ndarray
    floored: bool


def _evaluate(
    cp: _CrossProducts,
    ratios: np.ndarray,
    method: EstimationMethod,
    sigma2_e: Optional[float] = None,
) -> _Evaluation:
    """Log-likelihood at given ratios, with s_e^2 profiled unless given."""
    d = cp.scale(ratios)
    q = d.size
    dztx = d[:, None] * cp.ztx
    dzty = d * cp.zty
    if q:
        m = np.eye(q) + d[:, None] * cp.ztz * d[None, :]
        m_factor = scipy.linalg.cho_factor(m, lower=True)
        logdet_v = 2.0 * float(np.sum(np.log(np.diag(m_factor[0]))))
        m_inv_dztx = scipy.linalg.cho_solve(m_factor, dztx)
        m_inv_dzty = scipy.linalg.cho_solve(m_factor, dzty)
    else:
        m_factor = (np.zeros((0, 0)), True)
        logdet_v = 0.0
        m_inv_dztx, m_inv_dzty = dztx, dzty
    xvx = cp.xtx - dztx.T @ m_inv_dztx
    xvy = cp.xty - dztx.T @ m_inv_dzty
    yvy = cp.yty - float(dzty @ m_inv_dzty)

    xvx = 0.5 * (xvx + xvx.T)
    try:
        xvx_factor = scipy.linalg.cho_factor(xvx, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            "X' V^-1 X is not positive definite",
            condition_number=float(np.linalg.cond(xvx)),
        ) from e
    beta = scipy.linalg.cho_solve(xvx_factor, xvy)
    logdet_xvx = 2.0 * float(np.sum(np.log(np.diag(xvx_factor[0]))))

    rvr = yvy - float(beta @ xvy)
    dof = cp.n - cp.p if method is EstimationMethod.REML else cp.n
    floored = False
    if rvr < cp.residual_floor * dof:
        rvr = cp.residual_floor * dof
        floored = True

    if sigma2_e is None:
        sigma2_e = rvr / dof
    if method is EstimationMethod.REML:
        loglik = -0.5 * (
            dof * np.log(2.0 * np.pi * sigma2_e)
            + logdet_v
            + logdet_xvx
            - cp.logdet_xtx
            + rvr / sigma2_e
        )
    else:
        loglik = -0.5 * (
            dof * np.log(2.0 * np.pi * sigma2_e) + logdet_v + rvr / sigma2_e
        )

    return _Evaluation(
        loglik=float(loglik),
        sigma2_e=float(sigma2_e),
        beta=beta,
        rvr=rvr,
        logdet_v=logdet_v,
        logdet_xvx=logdet_xvx,
        scale=d,
        m_factor=m_factor,
        xvx_factor=xvx_factor,
        ztr=cp.zty - cp.ztx @ beta,
        floored=floored,
    )


def _blups(cp: _CrossProducts, ev: _Evaluation) -> Tuple[np.ndarray, ...]:
    """b = D M^-1 D Z'r, split per block."""
    d = ev.scale
    if d.size == 0:
        return ()
    stacked = d * scipy.linalg.cho_solve(ev.m_factor, d * ev.ztr)
    return tuple(np.split(stacked, np.cumsum(cp.dims)[:-1]))


def _variances(spec: MixedModelSpec, variances: Sequence[float]) -> np.ndarray:
    values = np.asarray(variances, dtype=float).ravel()
    if values.size != len(spec.blocks) + 1:
        raise ShapeError(
            f"Expected {len(spec.blocks) + 1} variances (residual first), "
            f"got {values.size}"
        )
    if values[0] <= 0 or np.any(values[1:] < 0):
        raise ParameterError(
            "Residual variance must be positive and block variances nonnegative"
        )
    return values


def log_likelihood(
    spec: MixedModelSpec,
    variances: Sequence[float],
    method: EstimationMethod = EstimationMethod.REML,
) -> float:
    """Log-likelihood with beta at its GLS value.

    Args:
        spec: Mixed model
        variances: (s_e^2, s_1^2, ..., s_m^2)
        method: REML for the restricted, ML for the full likelihood

    Returns:
        Log-likelihood value

    Raises:
        ParameterError: If a variance is out of range
        NumericalError: If X' Sigma^-1 X is singular
    """
    values = _variances(spec, variances)
    cp = _CrossProducts(spec)
    return _evaluate(cp, values[1:] / values[0], method, sigma2_e=values[0]).loglik


def restricted_log_likelihood(
    spec: MixedModelSpec, variances: Sequence[float]
) -> float:
    """Restricted log-likelihood with beta profiled at its GLS value.

    Args:
        spec: Mixed model
        variances: (s_e^2, s_1^2, ..., s_m^2)

    Returns:
        l_R including -1/2 log det(X' Sigma^-1 X) + 1/2 log det(X'X)
    """
    return log_likelihood(spec, variances, EstimationMethod.REML)


def profiled_criterion(
    spec: MixedModelSpec,
    log_ratios: Sequence[float],
    method: EstimationMethod = EstimationMethod.REML,
) -> float:
    """Log-likelihood with s_e^2 and beta profiled, as a function of log ratios."""
    cp = _CrossProducts(spec)
    return _evaluate(cp, np.exp(np.asarray(log_ratios, dtype=float)), method).loglik


def criterion_gradient(
    spec: MixedModelSpec,
    log_ratios: Sequence[float],
    method: EstimationMethod = EstimationMethod.REML,
) -> np.ndarray:
    """Analytic gradient of the profiled criterion with respect to log ratios.

    Args:
        spec: Mixed model
        log_ratios: log(s_j^2 / s_e^2) per block
        method: REML or ML

    Returns:
        Gradient vector, one entry per block
    """
    cp = _CrossProducts(spec)
    return _gradient(cp, np.exp(np.asarray(log_ratios, dtype=float)), method)


def _gradient(
    cp: _CrossProducts, ratios: np.ndarray, method: EstimationMethod
) -> np.ndarray:
    ev = _evaluate(cp, ratios, method)
    d = ev.scale
    w = d[:, None] * cp.ztz
    zvz = cp.ztz - w.T @ scipy.linalg.cho_solve(ev.m_factor, w)
    zvx = cp.ztx - w.T @ scipy.linalg.cho_solve(ev.m_factor, d[:, None] * cp.ztx)
    zvr = ev.ztr - w.T @ scipy.linalg.cho_solve(ev.m_factor, d * ev.ztr)
    if method is EstimationMethod.REML:
        inner = zvz - zvx @ scipy.linalg.cho_solve(ev.xvx_factor, zvx.T)
        dof = cp.n - cp.p
    else:
        inner = zvz
        dof = cp.n

    gradient = np.zeros(len(cp.dims))
    start = 0
    for j, q in enumerate(cp.dims):
        block = slice(start, start + q)
        trace = float(np.trace(inner[block, block]))
        quad = float(zvr[block] @ zvr[block])
        gradient[j] = -0.5 * ratios[j] * (trace - dof * quad / ev.rvr)
        start += q
    return gradient


def _build_fit(
    cp: _CrossProducts,
    ratios: np.ndarray,
    method: EstimationMethod,
    iterations: int,
    converged: bool,
    free: Sequence[int],
) -> VarianceComponentFit:
    ev = _evaluate(cp, ratios, method)
    if ev.floored:
        logger.warning(
            "Residual variance floored at %.3e; the fixed effects fit y exactly",
            ev.sigma2_e,
        )
    interior = [j for j in free if ratios[j] > 0]
    gradient_norm = 0.0
    if interior:
        gradient = _gradient(cp, ratios, method)
        gradient_norm = float(np.linalg.norm(gradient[interior]))
    return VarianceComponentFit(
        method=method,
        beta=ev.beta,
        blups=_blups(cp, ev),
        sigma2_e=ev.sigma2_e,
        sigma2=tuple(float(r * ev.sigma2_e) for r in ratios),
        criterion=ev.loglik,
        iterations=iterations,
        converged=converged,
        boundary=tuple(bool(r == 0.0) for r in ratios),
        gradient_norm=gradient_norm,
        residual_floored=ev.floored,
    )


def _nelder_mead(
    cp: _CrossProducts,
    ratios: np.ndarray,
    free: List[int],
    start: np.ndarray,
    method: EstimationMethod,
    options: FitOptions,
) -> Tuple[np.ndarray, float, int, bool]:
    """Maximize over the log ratios of ``free`` from one starting point."""
    low, high = LOG_RATIO_BOUNDS

    def objective(theta: np.ndarray) -> float:
        trial = ratios.copy()
        trial[free] = np.exp(np.clip(theta, low, high))
        return -_evaluate(cp, trial, method).loglik

    simplex = np.vstack([start, start + np.eye(len(free))])
    result = minimize(
        objective,
        start,
        method="Nelder-Mead",
        options={
            "maxiter": options.max_iter,
            "xatol": options.xatol,
            "fatol": options.fatol,
            "initial_simplex": simplex,
        },
    )
    best = ratios.copy()
    best[free] = np.exp(np.clip(result.x, low, high))
    return best, float(result.fun), int(result.nit), bool(result.success)


def fit_mixed_model(
    spec: MixedModelSpec,
    method: EstimationMethod = EstimationMethod.REML,
    fixed_ratios: Optional[Dict[int, float]] = None,
    options: Optional[FitOptions] = None,
) -> VarianceComponentFit:
    """Estimate variance components, fixed effects and BLUPs.

    The variance ratios are optimized on the log scale by Nelder-Mead from
    deterministic starting points (three by default); ratios below 1e-8 are
    set to zero and the remaining ones are re-optimized.

    Args:
        spec: Mixed model
        method: REML or ML
        fixed_ratios: Block index -> ratio s_j^2 / s_e^2 held fixed
        options: Optimizer controls; defaults when None

    Returns:
        Fitted model

    Raises:
        ParameterError: If N <= p + 1
        ConvergenceError: If no start converges; carries the best fit
    """
    if spec.n_obs <= spec.n_fixed + 1:
        raise ParameterError(
            f"Need N > p + 1 observations, got N={spec.n_obs}, p={spec.n_fixed}"
        )
    options = options or FitOptions()
    cp = _CrossProducts(spec)
    m = len(spec.blocks)
    fixed_ratios = dict(fixed_ratios or {})
    ratios = np.zeros(m)
    for index, value in fixed_ratios.items():
        if not 0 <= index < m or value < 0:
            raise ParameterError(f"Invalid fixed ratio {value} for block {index}")
        ratios[index] = value
    free = [j for j in range(m) if j not in fixed_ratios]
    if not free:
        return _build_fit(cp, ratios, method, 0, True, free)

    candidates = []
    for start_ratio in options.start_ratios:
        start = np.full(len(free), np.log(start_ratio))
        candidates.append(_nelder_mead(cp, ratios, free, start, method, options))
    best, best_value, _, converged = min(candidates, key=lambda c: c[1])
    iterations = sum(c[2] for c in candidates)

    if not converged:
        best, best_value, nit, converged = _nelder_mead(
            cp, best, free, np.log(best[free]), method, options
        )
        iterations += nit

    zeroed = [j for j in free if best[j] < ZERO_RATIO]
    best[zeroed] = 0.0
    remaining = [j for j in free if j not in zeroed]
    if zeroed and remaining:
        polished, value, nit, ok = _nelder_mead(
            cp, best, remaining, np.log(best[remaining]), method, options
        )
        iterations += nit
        if value <= -_evaluate(cp, best, method).loglik:
            best = polished
            converged = converged and ok
            newly_zero = [j for j in remaining if best[j] < ZERO_RATIO]
            best[newly_zero] = 0.0

    fit = _build_fit(cp, best, method, iterations, converged, free)
    if not converged:
        raise ConvergenceError(
            f"{method.value} optimization did not converge after "
            f"{iterations} iterations",
            best_fit=fit,
        )
    logger.debug(
        "%s fit: ratios=%s criterion=%.6f iterations=%d",
        method.value,
        np.array2string(fit.ratios, precision=4),
        fit.criterion,
        iterations,
    )
    return fit


def predict_random_effects(
    fit: VarianceComponentFit, spec: MixedModelSpec
) -> Tuple[np.ndarray, ...]:
    """BLUPs b_j = s_j^2 Z_j' Sigma^-1 (y - X beta) at the fitted variances.

    Args:
        fit: Fitted model
        spec: Spec the model was fitted to

    Returns:
        One BLUP vector per block
    """
    cp = _CrossProducts(spec)
    ev = _evaluate(cp, fit.ratios, fit.method, sigma2_e=fit.sigma2_e)
    ev.ztr = cp.zty - cp.ztx @ fit.beta
    return _blups(cp, ev)


def fit_with_fallback(
    spec: MixedModelSpec,
    warnings: List[str],
    method: EstimationMethod = EstimationMethod.REML,
    options: Optional[FitOptions] = None,
) -> VarianceComponentFit:
    """Fit, falling back to the best iterate when the optimizer does not converge.

    The fallback is logged and its message appended to ``warnings``.

    Raises:
        ConvergenceError: If no iterate could be evaluated at all
    """
    try:
        return fit_mixed_model(spec, method, options=options)
    except ConvergenceError as e:
        if e.best_fit is None:
            raise
        message = f"Using unconverged {method.value} fit: {e.message}"
        logger.warning(message)
        warnings.append(message)
        return e.best_fit  # type: ignore[no-any-return]
