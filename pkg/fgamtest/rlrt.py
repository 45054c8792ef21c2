"""Restricted likelihood ratio test for a single variance component.

For ``y = X beta + Z b + e`` with ``b ~ N(0, s_1^2 I)`` the RLRT of
``s_1^2 = 0`` has the exact finite-sample representation

    sup_l  (N - p) log{1 + N(l) / D(l)} - sum_k log(1 + l mu_k)

with ``N(l) = sum_k l mu_k / (1 + l mu_k) w_k^2`` and
``D(l) = sum_k w_k^2 / (1 + l mu_k) + chi^2_{N - p - K}``, where ``mu_k``
are the K positive eigenvalues of ``Z'(I - P_X)Z`` and the ``w_k`` are iid
standard normal. Under the null the numerator and denominator quadratic
forms are independent chi-square pieces; the observed statistic uses the
same objective with ``w`` replaced by the rotated residuals of the data.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import DegenerateDesignError, ParameterError, ShapeError
from .lmm import MixedModelSpec, VarianceComponentFit
from .streams import parallel_map, rng_for

logger = logging.getLogger(__name__)

GRID_SIZE = 200
GRID_LOG10_RANGE = (-5.0, 10.0)
ZERO_EIGENVALUE_RTOL = 1e-10
TIE_TOL = 1e-10
ZERO_RESIDUAL_RTOL = 1e-24
DRAWS_PER_CHUNK = 500
REPORTED_QUANTILES = (0.90, 0.95, 0.99)


@dataclass(frozen=True)
class SpectralDesign:
    """Eigen-structure of a one-component design shared by all draws.

    Args:
        mu: Positive eigenvalues of Z'(I - P_X)Z
        directions: N x K left singular vectors of (I - P_X)Z
        fixed_basis: N x p orthonormal basis of the column span of X
        n_obs: N
        n_fixed: p
    """

    mu: np.ndarray
    directions: np.ndarray
    fixed_basis: np.ndarray
    n_obs: int
    n_fixed: int

    @property
    def residual_dof(self) -> int:
        """Degrees of freedom of the chi-square remainder, N - p - K."""
        return self.n_obs - self.n_fixed - int(self.mu.size)

    @property
    def lambda_grid(self) -> np.ndarray:
        """{0} and log-uniform ratios on [1e-5, 1e10] / max(mu)."""
        positive = np.logspace(*GRID_LOG10_RANGE, GRID_SIZE) / float(self.mu.max())
        return np.concatenate([[0.0], positive])


@dataclass(frozen=True)
class RlrtNullSample:
    """Simulated null distribution of the RLRT statistic.

    Args:
        statistics: Sorted nonnegative simulated statistics
        nsim: Number of draws
        lambda_grid: Variance ratios searched for each supremum
        mu: Eigenvalues of the design
        seed: Seed the sample was drawn with
    """

    statistics: np.ndarray
    nsim: int
    lambda_grid: np.ndarray
    mu: np.ndarray
    seed: int

    @property
    def zero_mass(self) -> float:
        """Fraction of draws that are exactly zero."""
        return float(np.mean(self.statistics == 0.0))

    def quantile(self, level: float) -> float:
        """Empirical quantile of the null statistics."""
        return float(np.quantile(self.statistics, level))

    def summary(self) -> Dict[str, float]:
        """Zero mass and the reported upper quantiles."""
        return summarize_null(self.statistics)


def summarize_null(statistics: np.ndarray) -> Dict[str, float]:
    """Zero mass, size and the 0.90/0.95/0.99 quantiles of a null sample."""
    sample = np.asarray(statistics, dtype=float)
    result = {"zero_mass": float(np.mean(sample <= 0.0)), "nsim": float(sample.size)}
    for level in REPORTED_QUANTILES:
        result[f"q{int(round(level * 100))}"] = float(np.quantile(sample, level))
    return result


def spectral_design(fixed: np.ndarray, random: np.ndarray) -> SpectralDesign:
    """Eigen-decompose the design of a one-component RLRT.

    Args:
        fixed: N x p fixed-effect design of full column rank
        random: N x q random-effect design

    Returns:
        Spectral design

    Raises:
        ShapeError: If the row counts differ
        DegenerateDesignError: If Z lies in the span of X
    """
    x = np.asarray(fixed, dtype=float)
    z = np.asarray(random, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if x.shape[0] != z.shape[0]:
        raise ShapeError(f"X has {x.shape[0]} rows but Z has {z.shape[0]}")
    basis, _ = np.linalg.qr(x)
    residual = z - basis @ (basis.T @ z)
    left, singular, _ = np.linalg.svd(residual, full_matrices=False)
    mu = singular**2
    scale = float(np.max(np.abs(z))) ** 2 * z.shape[0] if z.size else 0.0
    keep = mu > ZERO_EIGENVALUE_RTOL * max(scale, float(mu.max(initial=0.0)))
    if not np.any(keep):
        raise DegenerateDesignError(
            "Random-effect design lies in the span of the fixed effects; "
            "all eigenvalues mu_k are zero",
            details={"mu": mu.tolist()},
        )
    return SpectralDesign(
        mu=mu[keep],
        directions=left[:, keep],
        fixed_basis=basis,
        n_obs=int(x.shape[0]),
        n_fixed=int(x.shape[1]),
    )


def _objective(
    design: SpectralDesign,
    lambdas: np.ndarray,
    signal: np.ndarray,
    total: np.ndarray,
) -> np.ndarray:
    """RLRT objective for draws (rows) at ratios (columns).

    Args:
        design: Spectral design
        lambdas: G ratios
        signal: B x K squared projections w_k^2
        total: B total sums of squares (signal plus remainder)
    """
    shrink = 1.0 / (1.0 + np.outer(design.mu, lambdas))
    denominator = signal @ shrink + (total - signal.sum(axis=1))[:, None]
    penalty = np.log1p(np.outer(lambdas, design.mu)).sum(axis=1)
    dof = design.n_obs - design.n_fixed
    return dof * np.log(total[:, None] / denominator) - penalty[None, :]


def _observed(design: SpectralDesign, response: np.ndarray) -> Tuple[float, float]:
    """Observed statistic and the maximizing ratio."""
    y = np.asarray(response, dtype=float).ravel()
    residual = y - design.fixed_basis @ (design.fixed_basis.T @ y)
    total = np.array([float(residual @ residual)])
    if total[0] <= ZERO_RESIDUAL_RTOL * max(float(y @ y), 1.0):
        return 0.0, 0.0
    signal = (design.directions.T @ residual)[None, :] ** 2
    grid = design.lambda_grid
    values = _objective(design, grid, signal, total)[0]
    best = int(np.argmax(values))
    if best == 0 and values[0] >= values[1:].max():
        return 0.0, 0.0

    low = np.log(grid[max(best - 1, 1)])
    high = np.log(grid[min(best + 1, grid.size - 1)])

    def negative(log_lambda: float) -> float:
        return -float(
            _objective(design, np.array([np.exp(log_lambda)]), signal, total)[0, 0]
        )

    refined = minimize_scalar(
        negative, bounds=(low, high), method="bounded", options={"xatol": 1e-10}
    )
    statistic, ratio = float(values[best]), float(grid[best])
    if -refined.fun > statistic:
        statistic, ratio = float(-refined.fun), float(np.exp(refined.x))
    return max(statistic, 0.0), ratio


def rlrt_statistic(
    response: np.ndarray, fixed: np.ndarray, random: np.ndarray
) -> float:
    """RLRT statistic 2 sup_{s_1 >= 0} l_R - 2 l_R(s_1 = 0).

    Args:
        response: N-vector y
        fixed: N x p fixed-effect design
        random: N x q design of the tested component

    Returns:
        Nonnegative statistic; exactly zero when the REML estimate is zero
    """
    statistic, _ = _observed(spectral_design(fixed, random), response)
    return statistic


def rlrt_statistic_with_ratio(
    response: np.ndarray, fixed: np.ndarray, random: np.ndarray
) -> Tuple[float, float]:
    """RLRT statistic together with the REML variance ratio s_1^2 / s_e^2."""
    return _observed(spectral_design(fixed, random), response)


def simulate_rlrt_null(
    fixed: np.ndarray,
    random: np.ndarray,
    nsim: int,
    seed: int,
    threads: int = 1,
    design: Optional[SpectralDesign] = None,
) -> RlrtNullSample:
    """Simulate the exact null distribution of the one-component RLRT.

    Draw i uses its own generator seeded from ``(seed, i)``, so the sample is
    identical for any number of worker threads.

    Args:
        fixed: N x p fixed-effect design
        random: N x q design of the tested component
        nsim: Number of draws
        seed: Seed of the draw streams
        threads: Worker threads
        design: Precomputed spectral design of (fixed, random)

    Returns:
        Sorted null sample

    Raises:
        ParameterError: If nsim < 1
        DegenerateDesignError: If Z lies in the span of X
    """
    if nsim < 1:
        raise ParameterError(f"nsim must be positive, got {nsim}")
    if nsim < 1000:
        logger.info("Simulating only %d null draws; 1000 or more recommended", nsim)
    spectral = design if design is not None else spectral_design(fixed, random)
    grid = spectral.lambda_grid
    k = spectral.mu.size
    remainder_dof = spectral.residual_dof

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        start, stop = bounds
        signal = np.empty((stop - start, k))
        remainder = np.zeros(stop - start)
        for row, index in enumerate(range(start, stop)):
            rng = rng_for(seed, index)
            signal[row] = rng.standard_normal(k) ** 2
            if remainder_dof > 0:
                remainder[row] = rng.chisquare(remainder_dof)
        total = signal.sum(axis=1) + remainder
        values = _objective(spectral, grid, signal, total)
        return np.maximum(values.max(axis=1), 0.0)

    chunks: List[Tuple[int, int]] = [
        (start, min(start + DRAWS_PER_CHUNK, nsim))
        for start in range(0, nsim, DRAWS_PER_CHUNK)
    ]
    statistics = np.concatenate(parallel_map(run_chunk, chunks, threads))
    return RlrtNullSample(
        statistics=np.sort(statistics),
        nsim=int(nsim),
        lambda_grid=grid,
        mu=spectral.mu,
        seed=int(seed),
    )


def pseudo_response(
    fit: VarianceComponentFit, spec: MixedModelSpec, nuisance_block: int
) -> np.ndarray:
    """Remove the predicted nuisance effect: y - Z_nuis b_nuis.

    Args:
        fit: Fit of ``spec`` holding the nuisance BLUP
        spec: Mixed model the fit belongs to
        nuisance_block: Index of the nuisance block in ``spec.blocks``

    Returns:
        Pseudo-response

    Raises:
        ParameterError: If the block index is invalid
    """
    if not 0 <= nuisance_block < len(spec.blocks) or nuisance_block >= len(fit.blups):
        raise ParameterError(
            f"Nuisance block {nuisance_block} does not exist; the model has "
            f"{len(spec.blocks)} block(s)"
        )
    return spec.response - spec.blocks[nuisance_block] @ fit.blups[nuisance_block]


def pvalue_from_null(statistic: float, null: RlrtNullSample) -> float:
    """Monte Carlo p-value (1 + #{null >= stat}) / (nsim + 1).

    Args:
        statistic: Observed statistic
        null: Simulated null sample (sorted)

    Returns:
        p-value in (0, 1]
    """
    return pvalue_from_sample(statistic, null.statistics)


def pvalue_from_sample(statistic: float, sample: np.ndarray) -> float:
    """Monte Carlo p-value against any sorted sample of null statistics."""
    ordered = np.asarray(sample, dtype=float)
    if ordered.size == 0:
        raise ParameterError("Null sample is empty")
    threshold = statistic - TIE_TOL * max(1.0, abs(statistic))
    exceed = ordered.size - int(np.searchsorted(ordered, threshold, side="left"))
    return (1.0 + exceed) / (ordered.size + 1.0)
