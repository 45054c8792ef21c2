"""B-spline bases, derivative penalties and the marginal mixed-model split.

Knots are open-uniform: the boundary knots are repeated ``degree + 1`` times
and the interior knots are equally spaced. Penalty integrals are computed
exactly per knot span with Gauss-Legendre quadrature.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline

from .exceptions import DomainError, NumericalError, ParameterError

logger = logging.getLogger(__name__)

SUPPORTED_PENALTY_ORDERS = (1, 2, 3)
ZERO_EIGENVALUE_RTOL = 1e-10
DOMAIN_RTOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Open-uniform knot vector of a B-spline family.

    Args:
        knots: Nondecreasing knots including the repeated boundary knots
        degree: Polynomial degree (3 for cubic)
        domain: Interval [a, b] spanned by the basis
    """

    knots: np.ndarray
    degree: int
    domain: Tuple[float, float]

    @property
    def n_basis(self) -> int:
        """Number of basis functions K = #knots - degree - 1."""
        return int(self.knots.size - self.degree - 1)

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knots inside [a, b], i.e. the knot-span boundaries."""
        return np.unique(self.knots[self.degree : self.knots.size - self.degree])

    @property
    def spacing(self) -> float:
        """Interior knot spacing h = (b - a) / (K - degree)."""
        a, b = self.domain
        return (b - a) / (self.n_basis - self.degree)


@dataclass(frozen=True)
class MarginalBasis:
    """Evaluated B-spline basis with its penalty and fixed/random split.

    The transform fields are None until `marginal_mixed_transform` fills them.

    Args:
        knots: Knot vector of the basis
        evaluation: B, the (#points x K) basis matrix
        penalty: P, the K x K integrated squared-derivative penalty scaled
            to unit knot spacing
        penalty_order: Derivative order of the penalty
        x_part: B U_n, basis of the unpenalized functions
        z_part: B U_p D_+^{-1/2}, basis of the penalized functions
        d_plus: Positive penalty eigenvalues, one per z_part column
        u_null: Penalty eigenvectors with zero eigenvalue
        u_range: Penalty eigenvectors with positive eigenvalue
    """

    knots: KnotVector
    evaluation: np.ndarray
    penalty: np.ndarray
    penalty_order: int = 2
    x_part: Optional[np.ndarray] = None
    z_part: Optional[np.ndarray] = None
    d_plus: Optional[np.ndarray] = None
    u_null: Optional[np.ndarray] = None
    u_range: Optional[np.ndarray] = None

    @property
    def n_basis(self) -> int:
        """Number of basis functions K."""
        return self.knots.n_basis

    @property
    def is_split(self) -> bool:
        """Whether the fixed/random transform has been computed."""
        return self.u_range is not None

    @property
    def random_transform(self) -> np.ndarray:
        """K x (K - nullity) matrix U_p D_+^{-1/2} mapping z-coefficients to B."""
        if self.u_range is None or self.d_plus is None:
            raise ParameterError("Marginal basis has not been split yet")
        return self.u_range / np.sqrt(self.d_plus)

    def transform_at(
        self, points: np.ndarray, clamp: bool = False
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluate the fixed and random parts at new points.

        Args:
            points: Evaluation points
            clamp: Clamp points outside the domain instead of failing

        Returns:
            Tuple (x_part, z_part) evaluated at ``points``
        """
        if self.u_null is None:
            raise ParameterError("Marginal basis has not been split yet")
        basis = eval_basis(self.knots, points, clamp=clamp)
        return basis @ self.u_null, basis @ self.random_transform


def make_knots(
    domain: Tuple[float, float], n_basis: int, degree: int = 3
) -> KnotVector:
    """Build an open-uniform knot vector with equally spaced interior knots.

    Args:
        domain: Interval (a, b) with a < b
        n_basis: Number of basis functions K
        degree: Polynomial degree

    Returns:
        Knot vector yielding exactly ``n_basis`` functions on [a, b]

    Raises:
        ParameterError: If K < degree + 2 or the domain is degenerate
    """
    a, b = float(domain[0]), float(domain[1])
    if degree < 1:
        raise ParameterError(f"Spline degree must be positive, got {degree}")
    if n_basis < degree + 2:
        raise ParameterError(
            f"Need at least degree + 2 = {degree + 2} basis functions, got {n_basis}"
        )
    if not np.isfinite(a) or not np.isfinite(b) or not a < b:
        raise ParameterError(f"Degenerate spline domain [{a}, {b}]")

    n_interior = n_basis - degree - 1
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    knots = np.concatenate(
        [np.full(degree + 1, a), interior, np.full(degree + 1, b)]
    )
    return KnotVector(knots=knots, degree=degree, domain=(a, b))


def _check_points(knots: KnotVector, points: np.ndarray, clamp: bool) -> np.ndarray:
    """Bring points into the basis domain or fail."""
    a, b = knots.domain
    tol = DOMAIN_RTOL * (b - a)
    outside = (points < a - tol) | (points > b + tol)
    if np.any(outside):
        if not clamp:
            worst = points[outside]
            raise DomainError(
                f"{int(outside.sum())} point(s) outside basis domain [{a}, {b}]; "
                f"range of offending values [{worst.min()}, {worst.max()}]",
                {"n_outside": int(outside.sum())},
            )
        logger.warning(
            "Clamping %d point(s) outside [%g, %g] to the boundary",
            int(outside.sum()),
            a,
            b,
        )
    return np.clip(points, a, b)


def eval_basis(
    knots: KnotVector, points: np.ndarray, clamp: bool = False
) -> np.ndarray:
    """Evaluate every B-spline of the family at the given points.

    Args:
        knots: Knot vector
        points: Evaluation points (any shape; flattened)
        clamp: Clamp out-of-domain points to the boundary with a warning

    Returns:
        (#points x K) matrix; rows sum to one

    Raises:
        DomainError: If a point lies outside the domain and ``clamp`` is False
    """
    x = _check_points(knots, np.asarray(points, dtype=float).ravel(), clamp)
    design = BSpline.design_matrix(x, knots.knots, knots.degree)
    return np.asarray(design.toarray())


def _integrated_products(knots: KnotVector, order: int) -> np.ndarray:
    """Integrate products of ``order``-th derivatives of all basis pairs.

    Products of derivatives are piecewise polynomials of degree
    2 * (degree - order), so per-span Gauss-Legendre with
    degree - order + 1 nodes is exact.
    """
    n_nodes = max(3, knots.degree - order + 1)
    unit_nodes, unit_weights = leggauss(n_nodes)
    breaks = knots.breakpoints
    left, right = breaks[:-1], breaks[1:]
    half = 0.5 * (right - left)
    nodes = (0.5 * (left + right))[:, None] + half[:, None] * unit_nodes[None, :]
    weights = half[:, None] * unit_weights[None, :]

    spline = BSpline(knots.knots, np.eye(knots.n_basis), knots.degree)
    if order > 0:
        spline = spline.derivative(order)
    values = spline(nodes.ravel())
    gram = values.T @ (weights.ravel()[:, None] * values)
    return 0.5 * (gram + gram.T)


def derivative_penalty(knots: KnotVector, order: int = 2) -> np.ndarray:
    """Penalty matrix of integrated squared ``order``-th derivatives.

    Args:
        knots: Knot vector
        order: Derivative order, one of 1, 2, 3 and below degree + 1

    Returns:
        Symmetric PSD K x K matrix of rank K - order

    Raises:
        ParameterError: If the order is unsupported or too large
    """
    if order not in SUPPORTED_PENALTY_ORDERS or order >= knots.degree + 1:
        raise ParameterError(
            f"Penalty order {order} not supported for degree {knots.degree}; "
            f"use one of {SUPPORTED_PENALTY_ORDERS} below degree + 1"
        )
    return _integrated_products(knots, order)


def scaled_penalty(knots: KnotVector, order: int = 2) -> np.ndarray:
    """Derivative penalty multiplied by h^(2 * order - 1).

    The result depends on the number of basis functions only, not on the
    width of the domain, and is close to the difference penalty D'D of the
    same order. Penalties of the x and t margins are then on one scale.
    """
    return knots.spacing ** (2 * order - 1) * derivative_penalty(knots, order)


def gram_matrix(knots: KnotVector) -> np.ndarray:
    """Gram matrix G with G[m, n] = integral of B_m(x) B_n(x) over the domain."""
    return _integrated_products(knots, 0)


def build_marginal_basis(
    knots: KnotVector,
    points: np.ndarray,
    penalty_order: int = 2,
    clamp: bool = False,
) -> MarginalBasis:
    """Evaluate a basis and its knot-scaled derivative penalty at the points.

    Args:
        knots: Knot vector
        points: Evaluation points
        penalty_order: Derivative order of the penalty
        clamp: Clamp out-of-domain points instead of failing

    Returns:
        Marginal basis without the fixed/random split
    """
    return MarginalBasis(
        knots=knots,
        evaluation=eval_basis(knots, points, clamp=clamp),
        penalty=scaled_penalty(knots, penalty_order),
        penalty_order=penalty_order,
    )


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive."""
    if vectors.size == 0:
        return vectors
    pivots = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])]
    return vectors * np.where(pivots < 0, -1.0, 1.0)


def split_penalty(
    penalty: np.ndarray, nullity: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a PSD penalty into null-space and range-space eigenvectors.

    Args:
        penalty: Symmetric PSD matrix
        nullity: Expected number of zero eigenvalues

    Returns:
        Tuple (u_null, u_range, d_plus)

    Raises:
        NumericalError: If the numerical nullity differs from ``nullity``
    """
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (penalty + penalty.T))
    scale = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    is_zero = eigenvalues < ZERO_EIGENVALUE_RTOL * scale
    if int(is_zero.sum()) != nullity:
        raise NumericalError(
            f"Penalty has {int(is_zero.sum())} zero eigenvalues, expected {nullity}",
            condition_number=(
                scale / float(np.min(eigenvalues[~is_zero]))
                if np.any(~is_zero)
                else None
            ),
            details={"eigenvalues": eigenvalues.tolist()},
        )
    u_null = _fix_signs(eigenvectors[:, is_zero])
    u_range = _fix_signs(eigenvectors[:, ~is_zero])
    return u_null, u_range, eigenvalues[~is_zero]


def marginal_mixed_transform(basis: MarginalBasis) -> MarginalBasis:
    """Split a marginal basis into unpenalized and identity-penalized parts.

    Forms ``X = B U_n`` and ``Z = B U_p D_+^{-1/2}``, so that the penalty
    becomes the identity on the Z coefficients and zero on the X ones.

    Args:
        basis: Marginal basis with evaluation and penalty

    Returns:
        Copy of ``basis`` with the transform fields populated
    """
    u_null, u_range, d_plus = split_penalty(basis.penalty, basis.penalty_order)
    return replace(
        basis,
        x_part=basis.evaluation @ u_null,
        z_part=basis.evaluation @ (u_range / np.sqrt(d_plus)),
        d_plus=d_plus,
        u_null=u_null,
        u_range=u_range,
    )
