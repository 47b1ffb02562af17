"""Shared numerical kernels.

Everything here is a pure function of its arguments: soft-thresholding,
weighted least squares, the softmax gating objective with its Newton-Raphson
maximizer, cyclic coordinate ascent for weighted Lasso problems, a two-phase
simplex solver, and the split-variable linear program of the Dantzig selector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._kernels import cd_sweeps
from .errors import (
    EmptyComponentError,
    InvalidInputError,
    LpInfeasibleError,
    NrFailureError,
    NumericalError,
)

#: centralized tolerances
CONVERGENCE_TOL = 1e-6      # EM-level relative objective change
INNER_TOL = 1e-8            # inner loops (NR, coordinate ascent)
FEAS_TOL = 1e-8             # LP feasibility
ZERO_COEF_TOL = 1e-8        # |coef| below this counts as zero for df


def soft_threshold(u: float, t: float):
    """sign(u) * max(|u| - t, 0); also works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("threshold must be non-negative")
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def weighted_ols(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """argmin_b sum_i w_i (y_i - X_i b)^2 via the normal equations.

    Singular systems get a small ridge and fall back to least squares.
    """
    w = np.asarray(w, dtype=float)
    if w.sum() <= 0:
        raise EmptyComponentError("weighted OLS needs positive total weight")
    Xw = X * w[:, None]
    G = X.T @ Xw
    h = Xw.T @ y
    try:
        b = np.linalg.solve(G, h)
        if np.all(np.isfinite(b)):
            return b
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-10 * max(np.trace(G) / G.shape[0], 1.0)
    try:
        return np.linalg.solve(G + ridge * np.eye(G.shape[0]), h)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, h, rcond=None)[0]


# ---------------------------------------------------------------------------
# Softmax gating objective (shared by the plain and penalized fitters)
# ---------------------------------------------------------------------------

def gating_linear_predictors(alpha0: np.ndarray, coefs: np.ndarray, R: np.ndarray) -> np.ndarray:
    """n x K matrix of gate scores; the reference component K scores zero."""
    n = R.shape[0]
    km1 = alpha0.shape[0]
    H = np.zeros((n, km1 + 1))
    if km1:
        H[:, :km1] = alpha0[None, :] + R @ coefs.T
    return H


def softmax_rows(H: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    Hs = H - H.max(axis=1, keepdims=True)
    P = np.exp(Hs)
    P /= P.sum(axis=1, keepdims=True)
    return P


def softmax_gating_q(alpha0, coefs, R, tau) -> float:
    """Expected complete-data gating objective sum_ik tau_ik log pi_k(r_i)."""
    km1 = np.asarray(alpha0).shape[0]
    if km1 == 0:
        return 0.0
    H = gating_linear_predictors(np.asarray(alpha0), np.asarray(coefs), R)
    logZ = logsumexp(H, axis=1)
    return float((tau[:, :km1] * H[:, :km1]).sum() - logZ.sum())


def gating_gradient(alpha0, coefs, R, tau) -> np.ndarray:
    """Stacked gradient of softmax_gating_q, one (q+1)-block per free gate."""
    km1 = alpha0.shape[0]
    H = gating_linear_predictors(alpha0, coefs, R)
    P = softmax_rows(H)
    Rt = np.column_stack([np.ones(R.shape[0]), R])
    diff = tau[:, :km1] - P[:, :km1]
    return (diff.T @ Rt).reshape(-1)


def _gating_hessian(P: np.ndarray, R: np.ndarray, km1: int) -> np.ndarray:
    Rt = np.column_stack([np.ones(R.shape[0]), R])
    d = Rt.shape[1]
    H = np.empty((km1 * d, km1 * d))
    for k in range(km1):
        for l in range(k, km1):
            wkl = P[:, k] * ((1.0 if k == l else 0.0) - P[:, l])
            block = -(Rt * wkl[:, None]).T @ Rt
            H[k * d:(k + 1) * d, l * d:(l + 1) * d] = block
            if l != k:
                H[l * d:(l + 1) * d, k * d:(k + 1) * d] = block.T
    return H


def nr_gating_step(alpha0, coefs, R, tau, max_halvings: int = 30):
    """One Newton-Raphson ascent step on the gating objective.

    Returns (alpha0', coefs', q_new). Step-halving guarantees the objective
    does not decrease; a singular Hessian gets a ridge before giving up.
    """
    km1 = alpha0.shape[0]
    if km1 == 0:
        return alpha0, coefs, 0.0
    d = R.shape[1] + 1
    q0 = softmax_gating_q(alpha0, coefs, R, tau)
    P = softmax_rows(gating_linear_predictors(alpha0, coefs, R))
    g = gating_gradient(alpha0, coefs, R, tau)
    H = _gating_hessian(P, R, km1)
    try:
        delta = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        delta = None
    if delta is None or not np.all(np.isfinite(delta)):
        H = H - 1e-8 * np.eye(H.shape[0])
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise NrFailureError("gating Hessian is singular") from exc
    xi = np.column_stack([alpha0, coefs]).reshape(-1)
    step = -delta  # H is negative (semi)definite, so -H^{-1} g is an ascent direction
    norm = np.linalg.norm(step)
    cap = 1e6 * (1.0 + np.linalg.norm(xi))
    if norm > cap:  # near-singular Hessian can blow the direction up
        step *= cap / norm
    nu = 1.0
    for _ in range(max_halvings + 1):
        xi_new = xi + nu * step
        blocks = xi_new.reshape(km1, d)
        a_new, c_new = blocks[:, 0].copy(), blocks[:, 1:].copy()
        q_new = softmax_gating_q(a_new, c_new, R, tau)
        if q_new >= q0 - 1e-12 * (1.0 + abs(q0)):
            return a_new, c_new, q_new
        nu *= 0.5
    raise NrFailureError("no step length improves the gating objective")


def maximize_gating_q(alpha0, coefs, R, tau, tol: float = INNER_TOL, max_iter: int = 50):
    """Iterate NR steps until the gating objective stops moving.

    A step that cannot improve the objective any further (saturated gates,
    vanishing curvature) ends the loop at the current iterate rather than
    failing: the objective is still non-decreasing, which is all EM needs.
    """
    alpha0 = np.asarray(alpha0, dtype=float).copy()
    coefs = np.asarray(coefs, dtype=float).copy()
    if alpha0.shape[0] == 0:
        return alpha0, coefs
    q_prev = softmax_gating_q(alpha0, coefs, R, tau)
    for _ in range(max_iter):
        try:
            alpha0, coefs, q_new = nr_gating_step(alpha0, coefs, R, tau)
        except NrFailureError:
            break
        if abs(q_new - q_prev) < tol * (1.0 + abs(q_prev)):
            break
        q_prev = q_new
    return alpha0, coefs


# ---------------------------------------------------------------------------
# Cyclic coordinate ascent for weighted Lasso
# ---------------------------------------------------------------------------

def coord_lasso(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    penalty: float,
    scale: float = 1.0,
    start: Optional[np.ndarray] = None,
    intercept_start: float = 0.0,
    with_intercept: bool = True,
    tol: float = INNER_TOL,
    max_sweeps: int = 200,
    kkt_tol: Optional[float] = 1e-7,
):
    """Weighted Lasso by cyclic soft-thresholded coordinate updates.

    Minimizes 0.5 sum_i w_i (y_i - b0 - X_i b)^2 + penalty*scale*||b||_1,
    with an unpenalized intercept when with_intercept is set. The effective
    threshold is penalty*scale (scale carries the sigma^2_k factor of the
    expert updates). After the objective stalls, extra sweeps run on a freshly
    recomputed residual until the KKT residual drops below kkt_tol or the
    sweep budget is spent. Returns (coefs, intercept, sweeps).
    """
    w = np.asarray(w, dtype=float)
    wsum = w.sum()
    if wsum <= 0:
        raise EmptyComponentError("coordinate ascent needs positive total weight")
    thr = penalty * scale
    if thr < 0:
        raise InvalidInputError("penalty*scale must be non-negative")
    d = X.shape[1]
    beta = np.zeros(d) if start is None else np.asarray(start, dtype=float).copy()
    b0 = float(intercept_start) if with_intercept else 0.0
    XT = np.ascontiguousarray(X.T)
    wXT = XT * w[None, :]
    col_ss = (wXT * XT).sum(axis=1)
    dead = col_ss <= 0.0
    if dead.any():
        beta[dead] = 0.0
        warnings.warn(
            f"{int(dead.sum())} zero-variance column(s); their coefficients are pinned to 0",
            RuntimeWarning,
        )
    if thr == 0.0:
        # unpenalized limit: the cyclic updates converge to the weighted
        # least-squares solution, so solve it exactly (coordinate descent is
        # hopeless on near-collinear designs at zero threshold)
        alive = ~dead
        cols = np.flatnonzero(alive)
        Xa = X[:, cols]
        if with_intercept:
            sol = weighted_ols(np.column_stack([np.ones(X.shape[0]), Xa]), y, w)
            b0 = float(sol[0])
            beta[cols] = sol[1:]
        else:
            beta[cols] = weighted_ols(Xa, y, w) if cols.size else beta[cols]
        return beta, b0, 1
    res = y - b0 - beta @ XT
    b0, sweeps = cd_sweeps(
        XT, wXT, col_ss, res, beta, w, wsum, float(thr),
        bool(with_intercept), b0, float(tol), int(max_sweeps),
    )
    if kkt_tol is not None:
        used = int(sweeps)
        while used < max_sweeps:
            res = y - b0 - beta @ XT
            if _lasso_kkt_violation(wXT, res, beta, w, thr, with_intercept) <= kkt_tol:
                break
            chunk = min(25, max_sweeps - used)
            b0, extra = cd_sweeps(
                XT, wXT, col_ss, res, beta, w, wsum, float(thr),
                bool(with_intercept), b0, 0.0, int(chunk),
            )
            used += int(extra)
        sweeps = used
    return beta, float(b0), int(sweeps)


def _lasso_kkt_violation(wXT, res, beta, w, thr, with_intercept) -> float:
    grad = wXT @ res
    active = np.abs(beta) > 1e-12
    worst = 0.0
    if active.any():
        worst = np.abs(grad[active] - thr * np.sign(beta[active])).max()
    if (~active).any():
        worst = max(worst, max(0.0, np.abs(grad[~active]).max() - thr))
    if with_intercept:
        worst = max(worst, abs(float(w @ res)))
    return worst


# ---------------------------------------------------------------------------
# Linear programming: two-phase simplex with Bland's rule
# ---------------------------------------------------------------------------

@dataclass
class LinearProgram:
    """min c.z  s.t.  A_ub z <= b_ub,  A_eq z = b_eq,  lb <= z (<= ub)."""

    objective: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None       # defaults to 0
    ub: Optional[np.ndarray] = None       # defaults to +inf

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        for name in ("A_ub", "A_eq"):
            mat = getattr(self, name)
            if mat is not None:
                mat = np.atleast_2d(np.asarray(mat, dtype=float))
                if mat.shape[1] != n:
                    raise InvalidInputError(
                        f"{name} has {mat.shape[1]} columns, objective has {n}"
                    )
                setattr(self, name, mat)
        self.b_ub = None if self.b_ub is None else np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        self.b_eq = None if self.b_eq is None else np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float)
        if self.ub is not None:
            self.ub = np.asarray(self.ub, dtype=float)


@dataclass
class LpSolution:
    status: str                     # optimal | infeasible | unbounded | iteration-limit
    z: Optional[np.ndarray]
    objective_value: Optional[float]


_PIV_TOL = 1e-9


def _simplex_phase(T, basis, cost, max_pivots):
    """Run simplex pivots (Bland's rule) on tableau T in place."""
    m, ncols = T.shape
    n = ncols - 1
    for it in range(max_pivots):
        red = cost - cost[basis] @ T[:, :n]
        entering = np.nonzero(red < -_PIV_TOL)[0]
        if entering.size == 0:
            return "optimal"
        j = int(entering[0])  # Bland: smallest index
        col = T[:, j]
        pos = col > _PIV_TOL
        if not pos.any():
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, -1] / col[pos]
        rmin = ratios.min()
        ties = np.nonzero(ratios <= rmin + _PIV_TOL * (1.0 + abs(rmin)))[0]
        i = int(ties[np.argmin(basis[ties])])  # Bland: leave smallest basic index
        piv = T[i, j]
        T[i, :] /= piv
        other = np.arange(m) != i
        T[other, :] -= np.outer(T[other, j], T[i, :])
        T[:, j] = 0.0
        T[i, j] = 1.0
        basis[i] = j
        np.maximum(T[:, -1], 0.0, out=T[:, -1], where=T[:, -1] > -1e-11)
    return "iteration-limit"


def solve_lp(lp: LinearProgram, max_pivots: int = 50000) -> LpSolution:
    """Two-phase simplex (Bland's rule, dense tableau).

    Infeasible and unbounded problems are reported through the status field,
    not raised.
    """
    c = lp.objective
    n = c.size
    shift = lp.lb
    rows = []
    rhs = []
    n_ub = 0
    if lp.A_ub is not None:
        rows.append(lp.A_ub)
        rhs.append(lp.b_ub - lp.A_ub @ shift)
        n_ub += lp.A_ub.shape[0]
    if lp.ub is not None:
        finite = np.isfinite(lp.ub)
        if finite.any():
            eye = np.eye(n)[finite]
            rows.append(eye)
            rhs.append(lp.ub[finite] - shift[finite])
            n_ub += int(finite.sum())
    n_eq = 0
    if lp.A_eq is not None:
        rows.append(lp.A_eq)
        rhs.append(lp.b_eq - lp.A_eq @ shift)
        n_eq = lp.A_eq.shape[0]
    if rows:
        A = np.vstack(rows)
        b = np.concatenate(rhs)
    else:
        A = np.zeros((0, n))
        b = np.zeros(0)
    m = A.shape[0]

    # standard form: slacks for the <= rows, then sign-normalize rhs
    full = np.hstack([A, np.vstack([np.eye(n_ub), np.zeros((n_eq, n_ub))]) if n_ub else np.zeros((m, 0))])
    neg = b < 0
    full[neg] *= -1.0
    b = np.where(neg, -b, b)

    n_cols = n + n_ub
    art = np.arange(n_cols, n_cols + m)
    T = np.hstack([full, np.eye(m), b[:, None]])
    basis = art.copy()

    cost1 = np.concatenate([np.zeros(n_cols), np.ones(m)])
    status = _simplex_phase(T, basis, cost1, max_pivots)
    if status == "iteration-limit":
        return LpSolution("iteration-limit", None, None)
    phase1_obj = float(cost1[basis] @ T[:, -1])
    if phase1_obj > 1e-8 * (1.0 + abs(b).max() if b.size else 1.0):
        return LpSolution("infeasible", None, None)

    # drive leftover artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n_cols:
            row = T[i, :n_cols]
            cands = np.nonzero(np.abs(row) > _PIV_TOL)[0]
            if cands.size == 0:
                keep[i] = False
                continue
            j = int(cands[0])
            piv = T[i, j]
            T[i, :] /= piv
            other = np.arange(T.shape[0]) != i
            T[other, :] -= np.outer(T[other, j], T[i, :])
            basis[i] = j
    T = np.hstack([T[keep][:, :n_cols], T[keep][:, -1:]])
    basis = basis[keep]

    cost2 = np.concatenate([c, np.zeros(n_ub)])
    status = _simplex_phase(T, basis, cost2, max_pivots)
    if status != "optimal":
        return LpSolution(status, None, None)

    x = np.zeros(n_cols)
    x[basis] = T[:, -1]
    z = x[:n] + shift
    return LpSolution("optimal", z, float(c @ z))


# ---------------------------------------------------------------------------
# Dantzig selector as a linear program
# ---------------------------------------------------------------------------

def dantzig_lp_build(
    Xw: np.ndarray,
    cw: np.ndarray,
    omega_weights: np.ndarray,
    constraint: Optional[np.ndarray] = None,
    bound: float = 1.0,
) -> LinearProgram:
    """Split-variable LP for min ||Omega z||_1 s.t. |Xw^T (cw - Xw z)| <= bound, A z = 0.

    Variables are (z+, z-) with z = z+ - z-, giving 2 * Xw.shape[1] columns;
    omega_weights is the diagonal of the l1 weighting matrix (a zero entry
    leaves that coefficient, typically the intercept, unpenalized).
    """
    if bound <= 0:
        raise InvalidInputError("Dantzig bound must be positive")
    Xw = np.asarray(Xw, dtype=float)
    cw = np.asarray(cw, dtype=float)
    omega_weights = np.asarray(omega_weights, dtype=float)
    d = Xw.shape[1]
    if cw.shape[0] != Xw.shape[0] or omega_weights.shape[0] != d:
        raise InvalidInputError("Dantzig LP pieces have mismatched shapes")
    G = Xw.T @ Xw
    h = Xw.T @ cw
    A_ub = np.block([[G, -G], [-G, G]])
    b_ub = np.concatenate([bound + h, bound - h])
    A_eq = b_eq = None
    if constraint is not None:
        constraint = np.atleast_2d(np.asarray(constraint, dtype=float))
        if constraint.shape[1] != d:
            raise InvalidInputError("constraint block width differs from design width")
        A_eq = np.hstack([constraint, -constraint])
        b_eq = np.zeros(constraint.shape[0])
    return LinearProgram(
        objective=np.concatenate([omega_weights, omega_weights]),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
    )


def dantzig_solve(
    Xw: np.ndarray,
    cw: np.ndarray,
    omega_weights: np.ndarray,
    constraint: Optional[np.ndarray] = None,
    bound: float = 1.0,
    relax_factor: float = 1.5,
    max_relax: int = 10,
):
    """Solve the Dantzig-selector LP, geometrically relaxing an infeasible bound.

    Returns (coefficients, bound_actually_used).
    """
    cur = float(bound)
    d = Xw.shape[1]
    for attempt in range(max_relax + 1):
        sol = solve_lp(dantzig_lp_build(Xw, cw, omega_weights, constraint, cur))
        if sol.status == "optimal":
            return sol.z[:d] - sol.z[d:], cur
        if sol.status != "infeasible":
            raise NumericalError(f"Dantzig LP ended with status {sol.status}")
        if attempt == max_relax:
            break
        cur *= relax_factor
        warnings.warn(
            f"Dantzig bound infeasible; relaxing to {cur:.3g}", RuntimeWarning
        )
    raise LpInfeasibleError(
        f"Dantzig LP infeasible even after relaxing the bound to {cur:.3g}"
    )
