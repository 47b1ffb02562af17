"""Per-observation design vectors built from curve projections.

Every curve is projected onto the r-dimensional basis; cross-Gram matrices
then map the projections into the expert designs x_i (dimension p) and gating
designs r_i (dimension q). The derivative-sparse model additionally uses
v_i = (A_p^{[d1]})^{-T} x_i and s_i = (A_q^{[d1]})^{-T} r_i.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .basis import (
    BSplineBasis,
    CurveSample,
    DerivativeMatrices,
    cross_gram,
    make_bspline_basis,
    project_curve,
)
from .errors import IdentifiabilityError, InvalidInputError


@dataclass(frozen=True)
class BasisConfig:
    """Dimensions (r, p, q) of the predictor, expert and gating bases."""

    r: int = 10
    p: int = 10
    q: int = 10
    degree: int = 3
    domain: tuple[float, float] = (0.0, 1.0)

    def build(self) -> tuple[BSplineBasis, BSplineBasis, BSplineBasis]:
        return (
            make_bspline_basis(self.r, self.degree, self.domain),
            make_bspline_basis(self.p, self.degree, self.domain),
            make_bspline_basis(self.q, self.degree, self.domain),
        )


@dataclass(frozen=True)
class DesignSet:
    """Stacked design rows for one dataset.

    x holds the expert designs (n x p), r the gating designs (n x q) and xhat
    the Gram-corrected curve coefficients (n x r_dim). v and s are only present after
    extend_for_ifme. standardized records the column stats (mean, scale) of
    x and r when standardization was requested, else None.
    """

    x: np.ndarray
    r: np.ndarray
    xhat: np.ndarray
    v: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    standardized: Optional[dict] = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.r.shape[1]

    @property
    def r_dim(self) -> int:
        return self.xhat.shape[1]

    def subset(self, idx) -> "DesignSet":
        """Row subset (used by cross-validation folds)."""
        return DesignSet(
            x=self.x[idx],
            r=self.r[idx],
            xhat=self.xhat[idx],
            v=None if self.v is None else self.v[idx],
            s=None if self.s is None else self.s[idx],
            standardized=self.standardized,
        )


def build_designs(
    curves: Sequence[CurveSample],
    basis_r,
    basis_p,
    basis_q,
    standardize: bool = False,
) -> DesignSet:
    """Project curves and assemble the x_i / r_i design rows.

    Each curve's raw projection is Gram-corrected into the least-squares
    expansion coefficients of the curve in the r-dimensional basis (xhat), so
    that xhat^T b_r(t) actually approximates the curve; the expert and gating
    rows are then the cross-Gram images x_i = G_rp^T xhat_i, r_i = G_rq^T
    xhat_i. Gram matrices are computed once per distinct grid (curves may
    carry different grids) and cached by the grid's byte content.
    """
    if len(curves) == 0:
        raise InvalidInputError("no curves supplied")
    if basis_p.dimension > basis_r.dimension or basis_q.dimension > basis_r.dimension:
        raise IdentifiabilityError(
            f"expert/gating dimensions (p={basis_p.dimension}, q={basis_q.dimension}) "
            f"must not exceed the projection dimension r={basis_r.dimension}"
        )
    gram_cache: dict[bytes, tuple] = {}
    xhat = np.empty((len(curves), basis_r.dimension))
    x = np.empty((len(curves), basis_p.dimension))
    r = np.empty((len(curves), basis_q.dimension))
    for i, curve in enumerate(curves):
        key = curve.grid.key()
        if key not in gram_cache:
            g_rr = cross_gram(basis_r, basis_r, curve.grid)
            gram_cache[key] = (
                lu_factor(g_rr),
                cross_gram(basis_r, basis_p, curve.grid),
                cross_gram(basis_r, basis_q, curve.grid),
            )
        g_rr_lu, g_rp, g_rq = gram_cache[key]
        xh = lu_solve(g_rr_lu, project_curve(curve, basis_r))
        xhat[i] = xh
        x[i] = g_rp.T @ xh
        r[i] = g_rq.T @ xh

    stats = None
    if standardize:
        stats = {
            "x_mean": x.mean(axis=0),
            "x_scale": _safe_scale(x),
            "r_mean": r.mean(axis=0),
            "r_scale": _safe_scale(r),
        }
        x = (x - stats["x_mean"]) / stats["x_scale"]
        r = (r - stats["r_mean"]) / stats["r_scale"]
    return DesignSet(x=x, r=r, xhat=xhat, standardized=stats)


def _safe_scale(mat: np.ndarray) -> np.ndarray:
    scale = mat.std(axis=0)
    scale[scale == 0.0] = 1.0
    return scale


def standardize_like(designs: DesignSet, reference: DesignSet) -> DesignSet:
    """Apply a reference DesignSet's column stats to fresh (unstandardized) designs."""
    if reference.standardized is None:
        return designs
    st = reference.standardized
    return replace(
        designs,
        x=(designs.x - st["x_mean"]) / st["x_scale"],
        r=(designs.r - st["r_mean"]) / st["r_scale"],
        standardized=st,
    )


def extend_for_ifme(
    designs: DesignSet, dmP: DerivativeMatrices, dmQ: DerivativeMatrices
) -> DesignSet:
    """Populate the v_i / s_i rows through the inverse-transpose derivative maps.

    v_i solves A_p^{[d1]T} v_i = x_i (and s_i likewise with A_q), so the
    round trip v @ A_d1 == x holds row-wise.
    """
    if dmP.dimension != designs.p:
        raise InvalidInputError(
            f"expert derivative matrices have dimension {dmP.dimension}, designs have p={designs.p}"
        )
    if dmQ.dimension != designs.q:
        raise InvalidInputError(
            f"gating derivative matrices have dimension {dmQ.dimension}, designs have q={designs.q}"
        )
    v = np.linalg.solve(dmP.A_d1.T, designs.x.T).T
    s = np.linalg.solve(dmQ.A_d1.T, designs.r.T).T
    return replace(designs, v=v, s=s)


def responses_of(curves: Sequence[CurveSample]) -> np.ndarray:
    """Collect the responses of a curve collection, requiring all present."""
    ys = [c.response for c in curves]
    if any(y is None for y in ys):
        raise InvalidInputError("every curve needs a response for fitting")
    return np.asarray(ys, dtype=float)


def labels_of(curves: Sequence[CurveSample]) -> Optional[np.ndarray]:
    """Collect true labels when every curve carries one, else None."""
    zs = [c.label for c in curves]
    if any(z is None for z in zs):
        return None
    return np.asarray(zs, dtype=int)
