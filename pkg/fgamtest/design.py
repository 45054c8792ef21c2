"""Quadrature operators, box products and the two FGAM surface designs.

Two parameterizations of the bivariate surface are built here:

* the standard tensor-product design ``L (B_x [] B_t)`` with penalty
  ``S(lx, lt) = lx (P_x (x) G_t) + lt (G_x (x) P_t)`` and its split into
  penalty null space and range space;
* the PS-ANOVA design with one unpenalized block ``X = L [1 : x : x*t]`` and
  three identity-penalized random blocks ``Z1 = L (x [] Z_t)``,
  ``Z2 = L (Z_x [] X_t)`` and ``Z3 = L (Z_x [] Z_t)``.

Curves are stacked row-major: entry ``i * J + j`` of a vectorized N x J
matrix belongs to curve i at time j.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from .enums import QuadratureRule
from .exceptions import (
    CapacityError,
    DegenerateDesignError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .models import FunctionalDataset
from .splines import (
    MarginalBasis,
    build_marginal_basis,
    eval_basis,
    gram_matrix,
    make_knots,
    marginal_mixed_transform,
    split_penalty,
)

logger = logging.getLogger(__name__)

MAX_TENSOR_COLUMNS = 2500
DEGENERATE_RANGE_RTOL = 1e-10


@dataclass(frozen=True)
class QuadratureOperator:
    """Quadrature weights integrating each curve over the time domain.

    Args:
        weights: J weights shared by every curve
        rule: Quadrature rule the weights implement
        grid: J observation times
        domain: Integration interval
        n_curves: Number of curves N
    """

    weights: np.ndarray
    rule: QuadratureRule
    grid: np.ndarray
    domain: Tuple[float, float]
    n_curves: int

    @property
    def matrix(self) -> scipy.sparse.csr_matrix:
        """Sparse N x (N*J) operator L = I_N (x) w^T."""
        return scipy.sparse.kron(
            scipy.sparse.identity(self.n_curves, format="csr"),
            scipy.sparse.csr_matrix(self.weights[None, :]),
            format="csr",
        )

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Integrate stacked pointwise values along each curve.

        Args:
            values: Array with N*J rows (optionally with trailing columns)

        Returns:
            Array with N rows, one integral per curve and column
        """
        values = np.asarray(values, dtype=float)
        n, j = self.n_curves, self.weights.size
        if values.shape[0] != n * j:
            raise ShapeError(
                f"Quadrature expects {n * j} stacked values, got {values.shape[0]}"
            )
        if values.ndim == 1:
            return values.reshape(n, j) @ self.weights
        stacked = values.reshape(n, j, -1)
        return np.einsum("njp,j->np", stacked, self.weights)


@dataclass(frozen=True)
class TensorDesign:
    """Standard tensor-product design for the FGAM surface.

    Args:
        model_matrix: L (B_x [] B_t), N x (K_x K_t)
        x_basis: Marginal x basis evaluated at the stacked predictor values
        t_basis: Marginal t basis evaluated at the stacked times
        gram_x: Gram matrix of the x basis
        gram_t: Gram matrix of the t basis
        quadrature: Quadrature operator used for the model matrix
    """

    model_matrix: np.ndarray
    x_basis: MarginalBasis
    t_basis: MarginalBasis
    gram_x: np.ndarray
    gram_t: np.ndarray
    quadrature: QuadratureOperator

    @property
    def null_dimension(self) -> int:
        """Dimension of the penalty null space."""
        return self.x_basis.penalty_order * self.t_basis.penalty_order

    def penalty(self, lambda_x: float, lambda_t: float) -> np.ndarray:
        """Tensor penalty S = lx (P_x (x) G_t) + lt (G_x (x) P_t).

        Args:
            lambda_x: Smoothing parameter of the x direction
            lambda_t: Smoothing parameter of the t direction

        Returns:
            Symmetric PSD (K_x K_t) x (K_x K_t) matrix
        """
        if lambda_x < 0 or lambda_t < 0:
            raise ParameterError("Smoothing parameters must be nonnegative")
        return lambda_x * np.kron(self.x_basis.penalty, self.gram_t) + lambda_t * (
            np.kron(self.gram_x, self.t_basis.penalty)
        )


@dataclass(frozen=True)
class PenaltySplit:
    """Tensor design split into penalty null-space and range-space parts.

    Args:
        x_null: L (B_x [] B_t) U_n, the fixed-effect design
        z_range: L (B_x [] B_t) U_p, the random-effect design
        prior_precision: U_p' S U_p (diagonal, equal to D_+)
        u_null: Null-space eigenvectors of S
        u_range: Range-space eigenvectors of S
    """

    x_null: np.ndarray
    z_range: np.ndarray
    prior_precision: np.ndarray
    u_null: np.ndarray
    u_range: np.ndarray

    @property
    def prior_covariance(self) -> np.ndarray:
        """Random-effect prior covariance [U_p' S U_p]^{-1}."""
        return np.diag(1.0 / np.diag(self.prior_precision))


@dataclass(frozen=True)
class PsAnovaDesign:
    """PS-ANOVA mixed-model design of the FGAM surface.

    Args:
        fixed: L [1 : x : x*t], N x 3
        z1: L (x [] Z_t), N x (K_t - 2)
        z2: L (Z_x [] X_t), N x 2(K_x - 2)
        z3: L (Z_x [] Z_t), N x (K_x - 2)(K_t - 2)
        x_basis: Split marginal x basis
        t_basis: Split marginal t basis
        quadrature: Quadrature operator
        dropped: L [t : Z_t], the pure-t columns removed for identifiability
    """

    fixed: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    x_basis: MarginalBasis
    t_basis: MarginalBasis
    quadrature: QuadratureOperator
    dropped: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        """Random-effect dimensions (q1, q2, q3)."""
        return self.z1.shape[1], self.z2.shape[1], self.z3.shape[1]

    @property
    def random_blocks(self) -> List[np.ndarray]:
        """The three random-effect blocks in order."""
        return [self.z1, self.z2, self.z3]

    @property
    def z_nonlinear(self) -> np.ndarray:
        """Unweighted concatenation [Z2 : Z3] of the non-FLM blocks."""
        return np.hstack([self.z2, self.z3])


def box_product(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product.

    Args:
        first: n x m1 matrix
        second: n x m2 matrix

    Returns:
        n x (m1 m2) matrix whose row i is kron(first[i], second[i])

    Raises:
        ShapeError: If the row counts differ
    """
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] != b.shape[0]:
        raise ShapeError(
            f"Box product needs equal row counts, got {a.shape[0]} and {b.shape[0]}"
        )
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def quadrature_weights(
    n_curves: int,
    grid: Sequence[float],
    rule: QuadratureRule = QuadratureRule.TRAPEZOID,
    domain: Optional[Tuple[float, float]] = None,
) -> QuadratureOperator:
    """Build the quadrature operator L for N curves on a common grid.

    The midpoint rule gives every time the weight |T| / J, which on the
    unit interval is L = J^{-1} (I_N (x) 1_J^T). The trapezoid rule uses the
    composite weights of the grid; any part of the domain beyond the first or
    last time is assigned to the nearest end point so that constants are
    integrated exactly.

    Args:
        n_curves: Number of curves N
        grid: J strictly increasing times
        rule: Quadrature rule
        domain: Integration interval; defaults to the grid end points

    Returns:
        Quadrature operator

    Raises:
        ParameterError: If J < 2, the grid is not increasing or the domain
            does not contain the grid
    """
    times = np.asarray(grid, dtype=float).ravel()
    if times.size < 2:
        raise ParameterError("Quadrature needs at least two grid points")
    if np.any(np.diff(times) <= 0):
        raise ParameterError("Quadrature grid must be strictly increasing")
    if n_curves < 1:
        raise ParameterError("Quadrature needs at least one curve")
    a, b = (float(times[0]), float(times[-1])) if domain is None else domain
    if not a < b or times[0] < a or times[-1] > b:
        raise ParameterError(f"Domain [{a}, {b}] must contain the grid")

    if rule is QuadratureRule.MIDPOINT:
        weights = np.full(times.size, (b - a) / times.size)
    else:
        steps = np.diff(times)
        weights = np.zeros(times.size)
        weights[:-1] += 0.5 * steps
        weights[1:] += 0.5 * steps
        weights[0] += times[0] - a
        weights[-1] += b - times[-1]

    return QuadratureOperator(
        weights=weights,
        rule=rule,
        grid=times,
        domain=(a, b),
        n_curves=int(n_curves),
    )


def _x_domain(data: FunctionalDataset) -> Tuple[float, float]:
    """Observed predictor range, rejecting (near-)constant predictors."""
    low, high = data.x_range
    scale = max(abs(low), abs(high), 1.0)
    if high - low <= DEGENERATE_RANGE_RTOL * scale:
        raise DegenerateDesignError(
            "Predictor curves are (near-)constant; the x basis is undefined",
            details={"x_range": [low, high]},
        )
    return low, high


def _check_capacity(kx: int, kt: int) -> None:
    if kx * kt > MAX_TENSOR_COLUMNS:
        raise CapacityError(
            f"K_x * K_t = {kx * kt} exceeds the limit of {MAX_TENSOR_COLUMNS} columns"
        )


def build_marginal_bases(
    data: FunctionalDataset,
    kx: int,
    kt: int,
    degree: int = 3,
    penalty_order: int = 2,
    x_domain: Optional[Tuple[float, float]] = None,
) -> Tuple[MarginalBasis, MarginalBasis]:
    """Build and split the x and t marginal bases of a dataset.

    The x knots span the observed predictor range (or ``x_domain``); the t
    knots span the time domain of the dataset.

    Args:
        data: Functional dataset
        kx: Number of x basis functions
        kt: Number of t basis functions
        degree: Spline degree
        penalty_order: Derivative order of both marginal penalties
        x_domain: Explicit x range, e.g. when the predictors are constant

    Returns:
        Tuple (x_basis, t_basis), both split
    """
    _check_capacity(kx, kt)
    x_knots = make_knots(x_domain or _x_domain(data), kx, degree)
    t_knots = make_knots(data.domain, kt, degree)  # type: ignore[arg-type]
    x_basis = build_marginal_basis(
        x_knots, data.predictors.ravel(), penalty_order, clamp=x_domain is not None
    )
    t_basis = build_marginal_basis(t_knots, data.times.ravel(), penalty_order)
    return marginal_mixed_transform(x_basis), marginal_mixed_transform(t_basis)


def tensor_design_from_bases(
    data: FunctionalDataset,
    x_basis: MarginalBasis,
    t_basis: MarginalBasis,
    quad: QuadratureOperator,
    clamp: bool = False,
) -> np.ndarray:
    """Evaluate the tensor model matrix L (B_x [] B_t) for (new) curves.

    Args:
        data: Curves to evaluate
        x_basis: x basis carrying the knots to use
        t_basis: t basis carrying the knots to use
        quad: Quadrature operator matching ``data``
        clamp: Clamp predictor values outside the x knot range

    Returns:
        N x (K_x K_t) model matrix
    """
    bx = eval_basis(x_basis.knots, data.predictors.ravel(), clamp=clamp)
    bt = eval_basis(t_basis.knots, data.times.ravel(), clamp=clamp)
    return quad.apply(box_product(bx, bt))


def build_tensor_design(
    data: FunctionalDataset,
    kx: int,
    kt: int,
    quad: QuadratureOperator,
    degree: int = 3,
    penalty_order: int = 2,
) -> TensorDesign:
    """Build the standard tensor-product FGAM design.

    Args:
        data: Dense functional dataset
        kx: Number of x basis functions
        kt: Number of t basis functions
        quad: Quadrature operator for ``data``
        degree: Spline degree
        penalty_order: Derivative order of both marginal penalties

    Returns:
        Tensor design with model matrix L (B_x [] B_t)

    Raises:
        CapacityError: If K_x K_t exceeds the column guard
    """
    _check_capacity(kx, kt)
    x_basis, t_basis = build_marginal_bases(data, kx, kt, degree, penalty_order)
    model_matrix = quad.apply(box_product(x_basis.evaluation, t_basis.evaluation))
    return TensorDesign(
        model_matrix=model_matrix,
        x_basis=x_basis,
        t_basis=t_basis,
        gram_x=gram_matrix(x_basis.knots),
        gram_t=gram_matrix(t_basis.knots),
        quadrature=quad,
    )


def split_penalty_nullspace(
    design: TensorDesign, lambda_x: float, lambda_t: float
) -> PenaltySplit:
    """Reparameterize the tensor design into fixed and random parts.

    Args:
        design: Tensor design
        lambda_x: Positive x smoothing parameter
        lambda_t: Positive t smoothing parameter

    Returns:
        Split with X_n = M U_n, Z_p = M U_p and prior precision U_p' S U_p

    Raises:
        ParameterError: If a smoothing parameter is not positive
    """
    if lambda_x <= 0 or lambda_t <= 0:
        raise ParameterError(
            f"Smoothing parameters must be positive, got ({lambda_x}, {lambda_t})"
        )
    u_null, u_range, d_plus = split_penalty(
        design.penalty(lambda_x, lambda_t), design.null_dimension
    )
    return PenaltySplit(
        x_null=design.model_matrix @ u_null,
        z_range=design.model_matrix @ u_range,
        prior_precision=np.diag(d_plus),
        u_null=u_null,
        u_range=u_range,
    )


def psanova_design_from_bases(
    data: FunctionalDataset,
    x_basis: MarginalBasis,
    t_basis: MarginalBasis,
    quad: QuadratureOperator,
    clamp: bool = False,
) -> PsAnovaDesign:
    """Evaluate the PS-ANOVA blocks for (new) curves from split bases.

    Args:
        data: Curves to evaluate
        x_basis: Split x basis
        t_basis: Split t basis
        quad: Quadrature operator matching ``data``
        clamp: Clamp predictor values outside the x knot range

    Returns:
        PS-ANOVA design
    """
    x = data.predictors.ravel()
    t = data.times.ravel()
    ones = np.ones_like(x)
    _, zx = x_basis.transform_at(x, clamp=clamp)
    _, zt = t_basis.transform_at(t, clamp=clamp)
    xt = np.column_stack([ones, t])

    return PsAnovaDesign(
        fixed=quad.apply(np.column_stack([ones, x, x * t])),
        z1=quad.apply(box_product(x, zt)),
        z2=quad.apply(box_product(zx, xt)),
        z3=quad.apply(box_product(zx, zt)),
        x_basis=x_basis,
        t_basis=t_basis,
        quadrature=quad,
        dropped=quad.apply(np.column_stack([t, zt])),
    )


def build_psanova_design(
    data: FunctionalDataset,
    kx: int,
    kt: int,
    quad: QuadratureOperator,
    degree: int = 3,
    penalty_order: int = 2,
    x_domain: Optional[Tuple[float, float]] = None,
) -> PsAnovaDesign:
    """Build the PS-ANOVA mixed-model design of the FGAM.

    The pure-t columns ``t`` and ``1 [] Z_t`` integrate to functions that
    are confounded with the intercept and are left out of the model.

    Args:
        data: Dense functional dataset
        kx: Number of x basis functions
        kt: Number of t basis functions
        quad: Quadrature operator for ``data``
        degree: Spline degree
        penalty_order: Derivative order of both marginal penalties
        x_domain: Explicit x range for the x knots

    Returns:
        PS-ANOVA design with dims (K_t - 2, 2(K_x - 2), (K_x - 2)(K_t - 2))
    """
    x_basis, t_basis = build_marginal_bases(
        data, kx, kt, degree, penalty_order, x_domain
    )
    design = psanova_design_from_bases(
        data, x_basis, t_basis, quad, clamp=x_domain is not None
    )
    logger.debug("PS-ANOVA design built with dims %s", design.dims)
    return design


def penalized_least_squares(
    model_matrix: np.ndarray, response: np.ndarray, penalty: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Minimize ||y - M theta||^2 + theta' S theta.

    Args:
        model_matrix: N x p design M
        response: Response y
        penalty: p x p PSD penalty S

    Returns:
        Tuple (theta, fitted values, trace of the hat matrix)

    Raises:
        NumericalError: If M'M + S is singular
    """
    gram = model_matrix.T @ model_matrix
    lhs = gram + penalty
    try:
        factor = scipy.linalg.cho_factor(lhs, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            "Penalized normal equations are singular",
            condition_number=float(np.linalg.cond(lhs)),
        ) from e
    theta = scipy.linalg.cho_solve(factor, model_matrix.T @ response)
    edf = float(np.trace(scipy.linalg.cho_solve(factor, gram)))
    return theta, model_matrix @ theta, edf


def split_ridge_fit(split: PenaltySplit, response: np.ndarray) -> np.ndarray:
    """Fitted values of the null/range split model at fixed precision.

    Minimizes ||y - X_n beta - Z_p b||^2 + b' (U_p' S U_p) b.

    Args:
        split: Penalty split of a tensor design
        response: Response y

    Returns:
        Fitted values
    """
    design = np.hstack([split.x_null, split.z_range])
    n_fixed = split.x_null.shape[1]
    penalty = scipy.linalg.block_diag(
        np.zeros((n_fixed, n_fixed)), split.prior_precision
    )
    _, fitted, _ = penalized_least_squares(design, response, penalty)
    return fitted
