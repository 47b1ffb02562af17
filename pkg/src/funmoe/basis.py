"""B-spline bases, curve projection, Gram matrices and finite-difference derivatives.

Curves live on a closed domain (by convention [0, 1]); integrals are
approximated by left-anchored Riemann sums with weights dt_j = t_j - t_{j-1}
(dt_1 = t_2 - t_1), so projections are invariant to the grid resolution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import BSpline

from .errors import (
    DegenerateDerivativeError,
    DomainError,
    InvalidBasisError,
    InvalidInputError,
)

#: condition-number threshold above which the d1 difference matrix gets a ridge
COND_LIMIT = 1e12
RIDGE_JITTER = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Ordered sampling times t_1 < ... < t_m inside a basis domain."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidInputError("a time grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("time grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    @property
    def riemann_weights(self) -> np.ndarray:
        """Left Riemann weights dt_j = t_j - t_{j-1}, with dt_1 = t_2 - t_1."""
        dt = np.diff(self.points)
        return np.concatenate(([dt[0]], dt))

    def key(self) -> bytes:
        """Hashable identity of the grid, used for Gram caching."""
        return self.points.tobytes()


def even_grid(m: int, domain=(0.0, 1.0)) -> TimeGrid:
    """m evenly spaced points covering the closed domain."""
    return TimeGrid(np.linspace(domain[0], domain[1], m))


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis of a given dimension (number of functions)."""

    dimension: int
    degree: int
    knots: np.ndarray
    domain: tuple[float, float]

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluation matrix E with E[i, j] = b_j(points[i])."""
        pts = np.asarray(points, dtype=float)
        lo, hi = self.domain
        if np.any(pts < lo) or np.any(pts > hi):
            raise DomainError(
                f"evaluation points outside basis domain [{lo}, {hi}]"
            )
        return BSpline.design_matrix(
            pts, self.knots, self.degree, extrapolate=False
        ).toarray()

    def evaluate(self, t: float) -> np.ndarray:
        """Basis function values (b_1(t), ..., b_dim(t))."""
        return self.evaluate_many(np.array([float(t)]))[0]


@dataclass(frozen=True)
class CurveSample:
    """One discretized curve, optionally paired with a response and a label."""

    grid: TimeGrid
    values: np.ndarray
    response: Optional[float] = None
    label: Optional[int] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size != len(self.grid):
            raise InvalidInputError(
                f"curve has {vals.size} values for a grid of {len(self.grid)} points"
            )
        object.__setattr__(self, "values", vals)
        if self.label is not None and self.label < 1:
            raise InvalidInputError("cluster labels are 1-based")


@dataclass(frozen=True)
class DerivativeMatrices:
    """Finite-difference images of a basis at an even grid of `dimension` points.

    A_d1 stacks the order-d1 differences of every basis function (row j is
    D^{d1} b(t_j)), A_d2 the order-d2 ones, and A = [A_d1; A_d2].
    """

    d1: int
    d2: int
    A_d1: np.ndarray
    A_d2: np.ndarray

    @property
    def dimension(self) -> int:
        return self.A_d1.shape[0]

    @property
    def A(self) -> np.ndarray:
        return np.vstack([self.A_d1, self.A_d2])

    def constraint_map(self) -> np.ndarray:
        """The matrix C = A_d2 A_d1^{-1} linking the two derivative images."""
        return np.linalg.solve(self.A_d1.T, self.A_d2.T).T


def make_bspline_basis(dimension: int, degree: int = 3, domain=(0.0, 1.0)) -> BSplineBasis:
    """Build a clamped B-spline basis with evenly spaced interior knots.

    The number of basis functions equals `dimension`; this requires
    dimension >= degree + 1.
    """
    if dimension < degree + 1:
        raise InvalidBasisError(
            f"dimension {dimension} < degree + 1 = {degree + 1}"
        )
    if degree < 0:
        raise InvalidBasisError("degree must be non-negative")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise InvalidBasisError("domain must be a non-degenerate interval")
    n_interior = dimension - degree - 1
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate(
        [np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]
    )
    return BSplineBasis(dimension=dimension, degree=degree, knots=knots, domain=(lo, hi))


def eval_basis(basis: BSplineBasis, t: float) -> np.ndarray:
    """Evaluate all basis functions at a single point of the domain."""
    return basis.evaluate(t)


def project_curve(curve: CurveSample, basis) -> np.ndarray:
    """Riemann-sum projection of a curve onto a basis.

    Returns the vector with entries sum_j U(t_j) b_k(t_j) dt_j, a discrete
    stand-in for the integral of U against each basis function.
    """
    if len(curve.grid) == 0:  # pragma: no cover - TimeGrid forbids this
        raise InvalidInputError("empty curve")
    E = basis.evaluate_many(curve.grid.points)
    w = curve.grid.riemann_weights
    return E.T @ (curve.values * w)


def cross_gram(basisA, basisB, grid: TimeGrid) -> np.ndarray:
    """Riemann approximation of the cross-product matrix of two bases.

    Entry (j, l) approximates the integral of b_j^A b_l^B over the domain.
    For basisA == basisB the result is symmetric positive semidefinite up to
    quadrature error.
    """
    EA = basisA.evaluate_many(grid.points)
    EB = EA if basisB is basisA else basisB.evaluate_many(grid.points)
    w = grid.riemann_weights
    return EA.T @ (EB * w[:, None])


def _difference_operator(size: int, d: int, scale: float) -> np.ndarray:
    """Matrix form of the order-d difference with one-sided rows at the left edge.

    Row j combines values at t_{j-d}..t_j (backward); rows with j < d use the
    forward difference of the same order anchored as close to t_j as the grid
    allows, keeping the operator square.
    """
    backward = np.array([(-1) ** i * math.comb(d, i) for i in range(d + 1)], dtype=float)
    forward = np.array([(-1) ** (d - i) * math.comb(d, i) for i in range(d + 1)], dtype=float)
    D = np.zeros((size, size))
    for j in range(size):
        if j >= d:
            for i in range(d + 1):
                D[j, j - i] += backward[i]
        else:
            start = min(j, size - 1 - d)
            for i in range(d + 1):
                D[j, start + i] += forward[i]
    return scale * D


def derivative_matrices(basis, d1: int, d2: int) -> DerivativeMatrices:
    """Finite-difference derivative matrices of a basis on an even grid.

    `basis` may be a BSplineBasis or a plain dimension (a default cubic basis
    on [0, 1] is then used). The grid has `dimension` evenly spaced points
    including both endpoints, and each difference order d is scaled by
    dimension**d, mirroring the recursion D b(t_j) = p [b(t_j) - b(t_{j-1})].
    """
    if isinstance(basis, (int, np.integer)):
        basis = make_bspline_basis(int(basis))
    dim = basis.dimension
    if not (0 <= d1 < d2 < dim):
        raise InvalidInputError(
            f"need 0 <= d1 < d2 < dimension, got d1={d1}, d2={d2}, dimension={dim}"
        )
    grid = np.linspace(basis.domain[0], basis.domain[1], dim)
    B = basis.evaluate_many(grid)
    A_d1 = B if d1 == 0 else _difference_operator(dim, d1, float(dim) ** d1) @ B
    A_d2 = _difference_operator(dim, d2, float(dim) ** d2) @ B

    cond = np.linalg.cond(A_d1)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        warnings.warn(
            f"order-{d1} difference matrix is ill-conditioned (cond={cond:.2e}); "
            "adding ridge jitter",
            RuntimeWarning,
        )
        A_d1 = A_d1 + RIDGE_JITTER * np.eye(dim)
        cond = np.linalg.cond(A_d1)
        if not np.isfinite(cond):
            raise DegenerateDerivativeError(
                f"order-{d1} difference matrix is singular"
            )
    return DerivativeMatrices(d1=d1, d2=d2, A_d1=A_d1, A_d2=A_d2)


def reconstruct_function(coeffs: np.ndarray, basis, grid: TimeGrid) -> np.ndarray:
    """Pointwise values of the basis expansion coeffs^T b(t) over a grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.dimension,):
        raise InvalidInputError(
            f"expected {basis.dimension} coefficients, got shape {coeffs.shape}"
        )
    return basis.evaluate_many(grid.points) @ coeffs
