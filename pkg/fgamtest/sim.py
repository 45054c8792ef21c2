"""Synthetic data generators and the rejection-rate study harness.

Two scenarios are supported:

* ``convex``: responses from the mixture ``phi F1 + (1 - phi) F2`` of a
  linear surface ``F1(x, t) = 2 x sin(pi t)`` and a non-linear surface
  ``F2(x, t) = 10 cos(-x/8 + t/4 - 5)``;
* ``mixed``: responses drawn from the PS-ANOVA mixed model itself, with
  ``b1 ~ N(0, 4 I)`` and chosen variances for ``b2`` and ``b3``.

Predictor curves are ``X(t) = sum_j xi_j phi_j(t)`` with the Fourier functions
sin(pi t), cos(pi t), sin(2 pi t), cos(2 pi t) and independent normal scores
whose standard deviation is ``8 / j^2`` (``ScoreScale.SD``, the default) or
whose variance is ``8 / j^2`` (``ScoreScale.VARIANCE``). With the variance
reading the curves stay within a few units of zero, where ``F2`` is close to
linear in ``x``, and the non-linear part of the convex scenario is swamped
by the noise.
"""

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.integrate import trapezoid
from typing_extensions import Annotated

from .config import (
    DEFAULT_KT,
    DEFAULT_KX,
    DEFAULT_NSIM,
    DEFAULT_QUADRATURE,
    DEFAULT_SEED,
    DEFAULT_THREADS,
)
from .design import build_psanova_design, quadrature_weights
from .enums import QuadratureRule, Scenario, ScoreScale, TestMethod
from .exceptions import ConfigError, FgamError, ParameterError
from .hypothesis import run_test
from .models import FunctionalDataset
from .streams import derive_seed, parallel_map, rng_for

logger = logging.getLogger(__name__)

DEFAULT_N_TIMES = 30
DEFAULT_SCORE_SCALE = ScoreScale.SD
SCORE_CONSTANT = 8.0
MIXED_FIXED_EFFECTS = (1.0, 0.01, 0.01)
MIXED_B1_VARIANCE = 4.0
MAX_STUDY_FAILURE_RATE = 0.02
POINT_KEY_SCALE = 1_000_000
VALUE_ERROR_PREFIX = "Value error, "

VARIANCE_LEVELS_N100 = (0.0, 0.04, 0.1, 0.25, 0.5, 0.75)
VARIANCE_LEVELS_N500 = (0.0, 0.004, 0.04, 0.14, 0.2, 0.3)
CONVEX_PHIS = (1.0, 0.75, 0.5, 0.25, 0.0)

UnitWeight = Annotated[float, Field(ge=0.0, le=1.0)]
Variance = Annotated[float, Field(ge=0.0)]
Level = Annotated[float, Field(gt=0.0, lt=1.0)]

TABLE_COLUMNS = [
    "scenario",
    "point",
    "method",
    "alpha",
    "reject_rate",
    "mcse",
    "reps",
    "failures",
]


def _fourier_basis(grid: np.ndarray) -> np.ndarray:
    return np.column_stack(
        [
            np.sin(np.pi * grid),
            np.cos(np.pi * grid),
            np.sin(2.0 * np.pi * grid),
            np.cos(2.0 * np.pi * grid),
        ]
    )


def gen_predictors(
    n_curves: int,
    n_times: int = DEFAULT_N_TIMES,
    seed: int = DEFAULT_SEED,
    score_scale: ScoreScale = DEFAULT_SCORE_SCALE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw predictor curves on an equally spaced grid of [0, 1].

    Args:
        n_curves: Number of curves N
        n_times: Number of observation times J
        seed: Seed of the draw
        score_scale: Whether 8 / j^2 is the score standard deviation or variance

    Returns:
        Tuple (N x J predictor matrix, grid)

    Raises:
        ParameterError: If J < 4 or N < 1
    """
    if n_times < 4:
        raise ParameterError(f"Need at least 4 observation times, got {n_times}")
    if n_curves < 1:
        raise ParameterError(f"Need at least one curve, got {n_curves}")
    grid = np.linspace(0.0, 1.0, n_times)
    j = np.arange(1, 5)
    if score_scale is ScoreScale.SD:
        sd = SCORE_CONSTANT / j**2
    else:
        sd = np.sqrt(SCORE_CONSTANT) / j
    scores = rng_for(seed).standard_normal((n_curves, 4)) * sd
    return scores @ _fourier_basis(grid).T, grid


def surface_linear(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """F1(x, t) = 2 x sin(pi t)."""
    return 2.0 * x * np.sin(np.pi * t)


def surface_nonlinear(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """F2(x, t) = 10 cos(-x/8 + t/4 - 5)."""
    return 10.0 * np.cos(-x / 8.0 + t / 4.0 - 5.0)


def convex_signal(predictors: np.ndarray, grid: np.ndarray, phi: float) -> np.ndarray:
    """Integral of phi F1 + (1 - phi) F2 along each curve (trapezoid rule)."""
    x = np.asarray(predictors, dtype=float)
    t = np.broadcast_to(np.asarray(grid, dtype=float), x.shape)
    surface = phi * surface_linear(x, t) + (1.0 - phi) * surface_nonlinear(x, t)
    return np.asarray(trapezoid(surface, x=grid, axis=1))


def gen_response_convex(
    predictors: np.ndarray,
    grid: np.ndarray,
    phi: float,
    seed: int = DEFAULT_SEED,
    noise_sd: float = 1.0,
) -> np.ndarray:
    """Responses of the convex-combination scenario.

    Args:
        predictors: N x J predictor matrix
        grid: J observation times
        phi: Weight of the linear surface, in [0, 1]
        seed: Seed of the noise
        noise_sd: Noise standard deviation

    Returns:
        N responses ``int (phi F1 + (1 - phi) F2)(X_i(t), t) dt + e_i``
    """
    if not 0.0 <= phi <= 1.0:
        raise ParameterError(f"phi must lie in [0, 1], got {phi}")
    signal = convex_signal(predictors, grid, phi)
    return signal + noise_sd * rng_for(seed).standard_normal(signal.size)


@dataclass(frozen=True)
class MixedTruth:
    """Responses of the mixed-model scenario and the random effects behind them."""

    response: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray


def gen_response_mixed(
    predictors: np.ndarray,
    grid: np.ndarray,
    sigma2_2: float,
    sigma2_3: float,
    kx: int = DEFAULT_KX,
    kt: int = DEFAULT_KT,
    seed: int = DEFAULT_SEED,
    quad: QuadratureRule = DEFAULT_QUADRATURE,
) -> MixedTruth:
    """Responses drawn from the PS-ANOVA mixed model.

    ``y = X beta + Z1 b1 + Z2 b2 + Z3 b3 + e`` with beta = (1, 0.01, 0.01),
    ``b1 ~ N(0, 4 I)``, ``b_j ~ N(0, s_j^2 I)`` and ``e ~ N(0, I)``.

    Args:
        predictors: N x J predictor matrix
        grid: J observation times
        sigma2_2: Variance of b2
        sigma2_3: Variance of b3
        kx: Number of x basis functions of the true model
        kt: Number of t basis functions of the true model
        seed: Seed of the random effects and the noise
        quad: Quadrature rule of the true model

    Returns:
        Responses with the true random effects
    """
    if sigma2_2 < 0 or sigma2_3 < 0:
        raise ParameterError("Variances must be nonnegative")
    data = FunctionalDataset(predictors=predictors, grid=grid)
    design = build_psanova_design(
        data, kx, kt, quadrature_weights(data.n_curves, data.grid, quad, data.domain)
    )
    rng = rng_for(seed)
    q1, q2, q3 = design.dims
    b1 = np.sqrt(MIXED_B1_VARIANCE) * rng.standard_normal(q1)
    b2 = np.sqrt(sigma2_2) * rng.standard_normal(q2)
    b3 = np.sqrt(sigma2_3) * rng.standard_normal(q3)
    noise = rng.standard_normal(data.n_curves)
    response = (
        design.fixed @ np.asarray(MIXED_FIXED_EFFECTS)
        + design.z1 @ b1
        + design.z2 @ b2
        + design.z3 @ b3
        + noise
    )
    return MixedTruth(response=response, b1=b1, b2=b2, b3=b3)


class StudyConfig(BaseModel):
    """Validated configuration of a rejection-rate study.

    Convex studies read ``phis``; mixed studies read explicit ``variances``
    pairs or the full grid ``variance_levels`` x ``variance_levels``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: Scenario
    n_curves: int = Field(100, ge=11)
    n_times: int = Field(DEFAULT_N_TIMES, ge=4)
    reps: int = Field(200, ge=1)
    phis: List[UnitWeight] = Field(default_factory=list)
    variances: List[Tuple[Variance, Variance]] = Field(default_factory=list)
    variance_levels: List[Variance] = Field(default_factory=list)
    kx: int = Field(DEFAULT_KX, ge=5)
    kt: int = Field(DEFAULT_KT, ge=5)
    alphas: List[Level] = Field(default_factory=lambda: [0.05], min_length=1)
    nsim: int = Field(DEFAULT_NSIM, ge=1)
    seed: int = DEFAULT_SEED
    methods: List[TestMethod] = Field(
        default_factory=lambda: [TestMethod.EQUALVC], min_length=1
    )
    quadrature: QuadratureRule = DEFAULT_QUADRATURE
    score_scale: ScoreScale = DEFAULT_SCORE_SCALE
    threads: int = Field(DEFAULT_THREADS, ge=1)

    @model_validator(mode="after")
    def _check_points(self) -> "StudyConfig":
        problems = []
        if self.scenario is Scenario.CONVEX:
            if not self.phis:
                problems.append("phis: a convex study needs at least one phi")
            if TestMethod.KNOWNSIG1 in self.methods:
                problems.append("methods: knownsig1 needs the mixed scenario")
        elif not self.variances and not self.variance_levels:
            problems.append(
                "variances: a mixed study needs variances or variance_levels"
            )
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "StudyConfig":
        """Validate a parsed TOML/JSON document.

        Raises:
            ConfigError: Listing every violation found
        """
        try:
            return cls.model_validate(dict(payload))
        except ValidationError as e:
            violations = []
            for error in e.errors():
                location = ".".join(str(part) for part in error["loc"])
                message = str(error["msg"])
                if message.startswith(VALUE_ERROR_PREFIX):
                    message = message[len(VALUE_ERROR_PREFIX) :]
                if location:
                    violations.append(f"{location}: {message}")
                else:
                    violations.extend(message.split("; "))
            raise ConfigError("Invalid study configuration", violations) from e

    def points(self) -> List["StudyPoint"]:
        """Scenario points in configuration order."""
        if self.scenario is Scenario.CONVEX:
            return [StudyPoint(self.scenario, (phi,)) for phi in self.phis]
        pairs = list(self.variances)
        pairs.extend(itertools.product(self.variance_levels, repeat=2))
        unique = list(dict.fromkeys((float(a), float(b)) for a, b in pairs))
        return [StudyPoint(self.scenario, pair) for pair in unique]


@dataclass(frozen=True)
class StudyPoint:
    """One setting of the data-generating parameters."""

    scenario: Scenario
    values: Tuple[float, ...]

    @property
    def label(self) -> str:
        """Human-readable identifier used in result tables."""
        if self.scenario is Scenario.CONVEX:
            return f"phi={self.values[0]:g}"
        return f"s2={self.values[0]:g},s3={self.values[1]:g}"

    @property
    def key(self) -> Tuple[int, ...]:
        """Seed key derived from the parameter values, not the point position."""
        scenario = 0 if self.scenario is Scenario.CONVEX else 1
        return (scenario, *(int(round(v * POINT_KEY_SCALE)) for v in self.values))


@dataclass(frozen=True)
class RejectionTable:
    """Rejection proportions per scenario point, method and level.

    Args:
        frame: One row per (point, method, alpha) with the columns
            scenario, point, method, alpha, reject_rate, mcse, reps, failures
        attempted: Replicates attempted per (point, method)
    """

    frame: pd.DataFrame
    attempted: int

    @property
    def flagged(self) -> bool:
        """Whether more than 2% of the replicates of any cell failed."""
        if self.frame.empty:
            return False
        worst = float(self.frame["failures"].max())
        return worst > MAX_STUDY_FAILURE_RATE * self.attempted

    def rate(self, point: str, method: TestMethod, alpha: float = 0.05) -> float:
        """Rejection proportion of one cell."""
        rows = self.frame[
            (self.frame["point"] == point)
            & (self.frame["method"] == method.value)
            & np.isclose(self.frame["alpha"], alpha)
        ]
        if rows.empty:
            raise ParameterError(f"No cell for {point}, {method.value}, {alpha}")
        return float(rows["reject_rate"].iloc[0])

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write the table as CSV."""
        self.frame.to_csv(path, index=False, float_format="%.10g")

    def to_records(self) -> List[Dict[str, Any]]:
        """Rows as JSON-ready dictionaries."""
        return json.loads(self.frame.to_json(orient="records", double_precision=15))

    def to_json(self, path: Union[str, Path]) -> None:
        """Write the table as a JSON list of rows."""
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")


def simulate_dataset(
    config: StudyConfig, point: StudyPoint, seed: int
) -> Tuple[FunctionalDataset, Optional[np.ndarray]]:
    """Generate one replicate of a scenario point.

    Returns:
        Tuple (dataset, true b1); b1 is None for the convex scenario
    """
    predictors, grid = gen_predictors(
        config.n_curves, config.n_times, derive_seed(seed, 0), config.score_scale
    )
    if point.scenario is Scenario.CONVEX:
        response = gen_response_convex(
            predictors, grid, point.values[0], derive_seed(seed, 1)
        )
        return FunctionalDataset(predictors, grid, response), None
    truth = gen_response_mixed(
        predictors,
        grid,
        point.values[0],
        point.values[1],
        config.kx,
        config.kt,
        derive_seed(seed, 1),
        config.quadrature,
    )
    return FunctionalDataset(predictors, grid, truth.response), truth.b1


def _run_replicate(
    config: StudyConfig, point: StudyPoint, rep: int
) -> Dict[TestMethod, Optional[float]]:
    """p-value of every method on one replicate; None where a method failed."""
    seed = derive_seed(config.seed, *point.key, rep)
    data, true_b1 = simulate_dataset(config, point, seed)
    results: Dict[TestMethod, Optional[float]] = {}
    for method in config.methods:
        try:
            result = run_test(
                method,
                data,
                kx=config.kx,
                kt=config.kt,
                nsim=config.nsim,
                seed=derive_seed(seed, 2),
                quad=config.quadrature,
                true_b1=true_b1,
            )
        except FgamError as e:
            logger.warning(
                "%s rep %d: %s failed: %s", point.label, rep, method.value, e
            )
            results[method] = None
            continue
        results[method] = None if result.unreliable else result.p_value
    return results


def _aggregate(
    point: StudyPoint,
    method: TestMethod,
    p_values: Sequence[Optional[float]],
    alphas: Sequence[float],
) -> List[Dict[str, Any]]:
    ok = np.array([p for p in p_values if p is not None], dtype=float)
    failures = len(p_values) - ok.size
    rows = []
    for alpha in alphas:
        if ok.size:
            rate = float(np.mean(ok <= alpha))
            mcse = float(np.sqrt(rate * (1.0 - rate) / ok.size))
        else:
            rate = mcse = float("nan")
        rows.append(
            {
                "scenario": point.scenario.value,
                "point": point.label,
                "method": method.value,
                "alpha": float(alpha),
                "reject_rate": rate,
                "mcse": mcse,
                "reps": int(ok.size),
                "failures": int(failures),
            }
        )
    return rows


def run_rejection_study(
    config: StudyConfig, threads: Optional[int] = None
) -> RejectionTable:
    """Estimate rejection rates of the configured tests.

    Replicate r of a point uses the seed derived from ``(seed, point key, r)``
    where the point key comes from the parameter values, so a study over a
    subset of points reproduces the matching rows of the full study.

    Args:
        config: Validated study configuration
        threads: Worker threads; defaults to ``config.threads``

    Returns:
        Rejection table
    """
    workers = config.threads if threads is None else max(1, threads)
    rows: List[Dict[str, Any]] = []
    for point in config.points():
        logger.info("Study point %s: %d reps", point.label, config.reps)
        outcomes = parallel_map(
            lambda rep, p=point: _run_replicate(config, p, rep),
            range(config.reps),
            workers,
        )
        for method in config.methods:
            rows.extend(
                _aggregate(point, method, [o[method] for o in outcomes], config.alphas)
            )
    table = RejectionTable(
        frame=pd.DataFrame.from_records(rows, columns=TABLE_COLUMNS),
        attempted=config.reps,
    )
    if table.flagged:
        logger.warning(
            "More than %.0f%% of replicates failed in at least one cell",
            100 * MAX_STUDY_FAILURE_RATE,
        )
    return table
