"""Derivative-sparse (interpretable) functional mixture of experts.

Experts and gates are parameterized by the order-d1 finite-difference images
of their coefficient functions, with the order-d2 images tied to them through
an equality constraint. Both M-steps become Dantzig-selector linear programs
of the split-variable form; sparsity in the d1/d2 images makes the
reconstructed coefficient functions exactly zero / low-order polynomial on
parts of the domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import metrics as _metrics
from .basis import DerivativeMatrices, TimeGrid, derivative_matrices, reconstruct_function
from .designs import BasisConfig, DesignSet
from .errors import (
    EmptyComponentError,
    FitFailureError,
    InvalidInputError,
    LpInfeasibleError,
)
from .fme import (
    SIGMA2_FLOOR,
    EmEngine,
    FitOptions,
    FitReport,
    e_step,
    log_likelihood,
    run_em,
    _lexicographic_order,
    _shift_gating,
)
from .lasso import WEIGHT_CLAMP, LassoPenalty
from .optim import (
    INNER_TOL,
    dantzig_solve,
    gating_linear_predictors,
    softmax_gating_q,
    softmax_rows,
)


@dataclass(frozen=True)
class DerivativeSpec:
    """Which two derivatives are sparsified and the weight on the higher one."""

    d1: int = 0
    d2: int = 3
    rho: float = 1e-3      # expert d2 weight
    varrho: float = 1e2    # gating d2 weight

    def __post_init__(self):
        if not 0 <= self.d1 < self.d2:
            raise InvalidInputError("need 0 <= d1 < d2")
        if self.rho <= 0 or self.varrho <= 0:
            raise InvalidInputError("derivative weights must be positive")


@dataclass
class IfmeExpertParams:
    """One expert: intercept, d1-image coefficients, derived d2 image, variance."""

    beta0: float
    gamma_d1: np.ndarray
    gamma_d2: np.ndarray
    sigma2: float

    def order_key(self):
        return (self.beta0, *map(float, self.gamma_d1), self.sigma2)


@dataclass
class IfmeGatingParams:
    """K-1 free gates on the s-designs; gate K is implicitly zero."""

    alpha0: np.ndarray            # (K-1,)
    omega_d1: np.ndarray          # (K-1, q)
    omega_d2: np.ndarray          # (K-1, q), derived from the constraint

    @staticmethod
    def zeros(K: int, q: int) -> "IfmeGatingParams":
        return IfmeGatingParams(
            np.zeros(K - 1), np.zeros((K - 1, q)), np.zeros((K - 1, q))
        )


@dataclass
class IfmeModel:
    """Parameter vector of the derivative-sparse mixture, plus its constraint data."""

    K: int
    gating: IfmeGatingParams
    experts: list[IfmeExpertParams]
    spec: DerivativeSpec
    dmP: DerivativeMatrices
    dmQ: DerivativeMatrices
    bases: Optional[BasisConfig] = None

    def gate_design(self, designs: DesignSet) -> np.ndarray:
        if designs.s is None:
            raise InvalidInputError("designs lack the s rows; call extend_for_ifme")
        return designs.s

    def expert_design(self, designs: DesignSet) -> np.ndarray:
        if designs.v is None:
            raise InvalidInputError("designs lack the v rows; call extend_for_ifme")
        return designs.v

    def gate_scores(self, designs: DesignSet) -> np.ndarray:
        return gating_linear_predictors(
            self.gating.alpha0, self.gating.omega_d1, self.gate_design(designs)
        )

    def component_means(self, designs: DesignSet) -> np.ndarray:
        V = self.expert_design(designs)
        M = np.empty((V.shape[0], self.K))
        for k, ex in enumerate(self.experts):
            M[:, k] = ex.beta0 + V @ ex.gamma_d1
        return M

    def sigma2_vector(self) -> np.ndarray:
        return np.array([ex.sigma2 for ex in self.experts])


def ifme_density(model: IfmeModel, v_i, s_i, y_i: float) -> float:
    """Mixture density of one observation under the derivative-sparse model."""
    from scipy.special import logsumexp

    from .fme import log_obs_matrix

    one = DesignSet(
        x=np.zeros((1, 1)),
        r=np.zeros((1, 1)),
        xhat=np.zeros((1, 1)),
        v=np.atleast_2d(np.asarray(v_i, dtype=float)),
        s=np.atleast_2d(np.asarray(s_i, dtype=float)),
    )
    L = log_obs_matrix(model, one, np.array([float(y_i)]))
    return float(np.exp(logsumexp(L[0])))


def ifme_penalty(model: IfmeModel, pen: LassoPenalty) -> float:
    """lam * sum_k(|gamma_d1| + rho |gamma_d2|) + chi * sum_k(|omega_d1| + varrho |omega_d2|)."""
    rho, varrho = model.spec.rho, model.spec.varrho
    expert_part = sum(
        float(np.abs(ex.gamma_d1).sum()) + rho * float(np.abs(ex.gamma_d2).sum())
        for ex in model.experts
    )
    gate_part = float(np.abs(model.gating.omega_d1).sum()) + varrho * float(
        np.abs(model.gating.omega_d2).sum()
    )
    return pen.lam * expert_part + pen.chi * gate_part


def penalized_loglik_ifme(model: IfmeModel, designs: DesignSet, y, pen: LassoPenalty) -> float:
    """Log-likelihood minus the derivative penalty (the maximized objective)."""
    return log_likelihood(model, designs, np.asarray(y, dtype=float)) - ifme_penalty(model, pen)


def e_step_ifme(model: IfmeModel, designs: DesignSet, y: np.ndarray) -> np.ndarray:
    """Posterior memberships; same contract as the plain-model E-step."""
    return e_step(model, designs, y)


# ---------------------------------------------------------------------------
# Dantzig-selector M-steps
# ---------------------------------------------------------------------------

def _gate_qpen(alpha0, W1, W2, S, tau, chi, varrho) -> float:
    return softmax_gating_q(alpha0, W1, S, tau) - chi * (
        float(np.abs(W1).sum()) + varrho * float(np.abs(W2).sum())
    )


def m_step_gating_dantzig(
    gating: IfmeGatingParams,
    S: np.ndarray,
    tau: np.ndarray,
    chi: float,
    spec: DerivativeSpec,
    dmQ: DerivativeMatrices,
    tol: float = INNER_TOL,
    max_sweeps: int = 25,
) -> IfmeGatingParams:
    """Cycle the gates through constrained Dantzig-selector LP updates.

    Per gate: IRLS weights and working responses from the current scores,
    then the split-variable LP with the d2 equality block; the LP solution
    replaces the gate. Sweeps repeat until the penalized gating objective
    stops increasing significantly; a sweep that lowers it is rolled back
    before stopping (the Dantzig solution optimizes a surrogate, so per-sweep
    gains are not guaranteed). An infeasible LP keeps the previous gate.
    """
    if chi <= 0:
        raise InvalidInputError("the gating Dantzig bound chi must be positive")
    a = gating.alpha0.astype(float).copy()
    W1 = gating.omega_d1.astype(float).copy()
    km1 = a.shape[0]
    q = S.shape[1]
    Cq = dmQ.constraint_map()
    if km1 == 0:
        return IfmeGatingParams(a, W1, W1 @ Cq.T)
    A = np.hstack([np.zeros((q, 1)), Cq, -np.eye(q)])
    omega_w = np.concatenate([[0.0], np.ones(q), spec.varrho * np.ones(q)])
    zeros_block = np.zeros((S.shape[0], q))

    def qpen(a_, W1_):
        return _gate_qpen(a_, W1_, W1_ @ Cq.T, S, tau, chi, spec.varrho)

    q_cur = qpen(a, W1)
    for _ in range(max_sweeps):
        a_prev, W1_prev, q_prev = a.copy(), W1.copy(), q_cur
        for k in range(km1):
            P = softmax_rows(gating_linear_predictors(a, W1, S))
            pik = P[:, k]
            w = np.clip(pik * (1.0 - pik), WEIGHT_CLAMP, None)
            c = a[k] + S @ W1[k] + (tau[:, k] - pik) / w
            sw = np.sqrt(w)
            Xw = np.hstack([sw[:, None], sw[:, None] * S, zeros_block])
            cw = sw * c
            try:
                coef, _ = dantzig_solve(Xw, cw, omega_w, A, chi)
            except LpInfeasibleError:
                warnings.warn(
                    f"gate {k + 1} Dantzig update infeasible; keeping previous gate",
                    RuntimeWarning,
                )
                continue
            a[k] = coef[0]
            W1[k] = coef[1 : q + 1]
        q_cur = qpen(a, W1)
        if q_cur < q_prev - tol * (1.0 + abs(q_prev)):
            a, W1, q_cur = a_prev, W1_prev, q_prev
            break
        if abs(q_cur - q_prev) < tol * (1.0 + abs(q_prev)):
            break
    return IfmeGatingParams(a, W1, W1 @ Cq.T)


def m_step_experts_dantzig(
    expert: IfmeExpertParams,
    V: np.ndarray,
    y: np.ndarray,
    tau_k: np.ndarray,
    lam: float,
    spec: DerivativeSpec,
    dmP: DerivativeMatrices,
) -> IfmeExpertParams:
    """Constrained Dantzig-selector update of one expert, then its variance.

    The weighted design/response follow the sigma * sqrt(tau) construction
    with sigma fixed at its previous value during the LP; the LP solution is
    taken as-is (it optimizes a surrogate of the penalized objective).
    """
    if lam <= 0:
        raise InvalidInputError("the expert Dantzig bound lam must be positive")
    from .fme import check_component_mass

    n_k = float(tau_k.sum())
    check_component_mass(n_k, V.shape[1] + 1)
    p = V.shape[1]
    Cp = dmP.constraint_map()
    A = np.hstack([np.zeros((p, 1)), Cp, -np.eye(p)])
    lam_w = np.concatenate([[0.0], np.ones(p), spec.rho * np.ones(p)])
    sigma = float(np.sqrt(expert.sigma2))
    st = np.sqrt(tau_k)
    Xw = sigma * np.hstack([st[:, None], st[:, None] * V, np.zeros((V.shape[0], p))])
    yw = sigma * st * y

    beta0, g1 = expert.beta0, expert.gamma_d1
    try:
        coef, _ = dantzig_solve(Xw, yw, lam_w, A, lam)
        g1 = coef[1 : p + 1]
        # the intercept carries no l1 weight, so the LP leaves it anywhere in
        # the feasible band; re-maximize it exactly (weighted mean residual)
        beta0 = float(tau_k @ (y - V @ g1)) / n_k
    except LpInfeasibleError:
        warnings.warn(
            "expert Dantzig update infeasible; keeping previous coefficients",
            RuntimeWarning,
        )
    res = y - beta0 - V @ g1
    sigma2 = max(float(tau_k @ (res * res)) / n_k, SIGMA2_FLOOR)
    return IfmeExpertParams(
        beta0=float(beta0), gamma_d1=np.asarray(g1, dtype=float).copy(),
        gamma_d2=Cp @ g1, sigma2=sigma2,
    )


# ---------------------------------------------------------------------------
# EM driver and reconstruction
# ---------------------------------------------------------------------------

class _IfmeEngine(EmEngine):
    strict_monotone = False   # LP M-steps maximize a surrogate; gaps are recorded

    def __init__(self, designs, y, K, pen, spec, dmP, dmQ, bases=None):
        self.designs = designs
        self.y = y
        self.K = K
        self.pen = pen
        self.spec = spec
        self.dmP = dmP
        self.dmQ = dmQ
        self.bases = bases

    def init_model(self, tau0):
        p = self.designs.p
        experts = []
        for k in range(self.K):
            w = tau0[:, k]
            n_k = w.sum()
            if n_k < 1e-8:
                raise EmptyComponentError(f"component {k + 1} empty at init")
            mu = float(w @ self.y) / n_k
            var = max(float(w @ (self.y - mu) ** 2) / n_k, SIGMA2_FLOOR)
            experts.append(IfmeExpertParams(mu, np.zeros(p), np.zeros(p), var))
        return IfmeModel(
            K=self.K,
            gating=IfmeGatingParams.zeros(self.K, self.designs.q),
            experts=experts,
            spec=self.spec,
            dmP=self.dmP,
            dmQ=self.dmQ,
            bases=self.bases,
        )

    def e_step(self, model):
        return e_step(model, self.designs, self.y)

    def m_step(self, model, tau):
        experts = [
            m_step_experts_dantzig(
                model.experts[k], self.designs.v, self.y, tau[:, k],
                self.pen.lam, self.spec, self.dmP,
            )
            for k in range(self.K)
        ]
        gating = m_step_gating_dantzig(
            model.gating, self.designs.s, tau, self.pen.chi, self.spec, self.dmQ
        )
        return replace(model, gating=gating, experts=experts)

    def objective(self, model):
        return penalized_loglik_ifme(model, self.designs, self.y, self.pen)

    def canonicalize(self, model, tau):
        order = _lexicographic_order(model.experts)
        if order != list(range(model.K)):
            a, W1 = _shift_gating(model.gating.alpha0, model.gating.omega_d1, order)
            model = replace(
                model,
                gating=IfmeGatingParams(a, W1, W1 @ self.dmQ.constraint_map().T),
                experts=[model.experts[k] for k in order],
            )
            tau = tau[:, order]
        gating = m_step_gating_dantzig(
            model.gating, self.designs.s, tau, self.pen.chi, self.spec, self.dmQ
        )
        return replace(model, gating=gating)


def fit_ifme(
    designs: DesignSet,
    y: np.ndarray,
    K: int,
    pen: LassoPenalty,
    spec: Optional[DerivativeSpec] = None,
    options: Optional[FitOptions] = None,
    dmP: Optional[DerivativeMatrices] = None,
    dmQ: Optional[DerivativeMatrices] = None,
    bases=None,
) -> tuple[IfmeModel, FitReport]:
    """EM fit of the derivative-sparse mixture; trace tracks the penalized objective.

    Monotonicity gaps beyond tolerance are recorded in the report (the LP
    M-steps optimize surrogates); the final objective staying above the
    initial one is still required of a healthy fit.
    """
    spec = spec or DerivativeSpec()
    options = options or FitOptions()
    y = np.asarray(y, dtype=float)
    if designs.v is None or designs.s is None:
        raise InvalidInputError("designs lack v/s rows; call extend_for_ifme first")
    if designs.n <= K:
        raise FitFailureError(f"need more than K={K} observations, got {designs.n}")
    bases_cfg = bases
    if dmP is None:
        dmP = _dm_from_bases(bases_cfg, designs.p, spec, which="p")
    if dmQ is None:
        dmQ = _dm_from_bases(bases_cfg, designs.q, spec, which="q")
    engine = _IfmeEngine(designs, y, K, pen, spec, dmP, dmQ, bases_cfg)
    model, trace, converged, tau, gaps = run_em(engine, designs.n, K, options)
    ll = log_likelihood(model, designs, y)
    pen_val = ifme_penalty(model, pen)
    df, mbic, bic = _metrics.df_and_mbic(model, ll, designs.n)
    report = FitReport(
        loglik_trace=trace,
        tau=tau,
        labels=_metrics.map_cluster(tau),
        iterations=len(trace) - 1,
        converged=converged,
        df=df,
        bic=bic,
        mbic=mbic,
        loglik=ll,
        penalized_loglik=ll - pen_val,
        surrogate_gaps=gaps,
    )
    return model, report


def _dm_from_bases(bases, dim, spec, which):
    from .basis import make_bspline_basis

    if bases is not None:
        degree, domain = bases.degree, bases.domain
    else:
        degree, domain = 3, (0.0, 1.0)
    return derivative_matrices(make_bspline_basis(dim, degree, domain), spec.d1, spec.d2)


def reconstruct_networks(model: IfmeModel, grid: TimeGrid):
    """Sampled coefficient functions: (alpha_hat (K-1) x m, beta_hat K x m).

    Coefficients in the original basis are recovered by inverting the square
    d1 difference block, then expanded pointwise on the grid.
    """
    if model.bases is None:
        raise InvalidInputError("model carries no basis configuration")
    _, basis_p, basis_q = model.bases.build()
    m = len(grid)
    beta_hat = np.empty((model.K, m))
    for k, ex in enumerate(model.experts):
        eta = np.linalg.solve(model.dmP.A_d1, ex.gamma_d1)
        beta_hat[k] = reconstruct_function(eta, basis_p, grid)
    alpha_hat = np.empty((model.K - 1, m))
    for k in range(model.K - 1):
        zeta = np.linalg.solve(model.dmQ.A_d1, model.gating.omega_d1[k])
        alpha_hat[k] = reconstruct_function(zeta, basis_q, grid)
    return alpha_hat, beta_hat
