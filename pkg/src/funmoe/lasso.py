"""l1-regularized functional mixture of experts, fit by EM with coordinate ascent.

The M-step solves a weighted Lasso per expert (threshold lambda * sigma2_k)
and, for the gating network, cycles the gates through quadratic
approximations with working responses, followed by a backtracking blend that
keeps the penalized gating objective from decreasing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metrics as _metrics
from .designs import DesignSet
from .errors import EmptyComponentError, FitFailureError, InvalidInputError
from .fme import (
    SIGMA2_FLOOR,
    EmEngine,
    ExpertParams,
    FitOptions,
    FitReport,
    FmeModel,
    GatingParams,
    canonicalize_fme,
    e_step,
    log_likelihood,
    run_em,
)
from .optim import INNER_TOL, coord_lasso, gating_linear_predictors, softmax_gating_q, softmax_rows

WEIGHT_CLAMP = 1e-10


@dataclass(frozen=True)
class LassoPenalty:
    """Tuning constants: lam penalizes expert coefficients, chi the gating ones."""

    lam: float = 0.0
    chi: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.chi < 0:
            raise InvalidInputError("penalties must be non-negative")


def penalty_value(model: FmeModel, pen: LassoPenalty) -> float:
    """lam * sum |eta| + chi * sum |zeta|; intercepts and variances excluded."""
    expert_part = sum(float(np.abs(ex.eta).sum()) for ex in model.experts)
    gate_part = float(np.abs(model.gating.zeta).sum())
    return pen.lam * expert_part + pen.chi * gate_part


def penalized_loglik(model: FmeModel, designs: DesignSet, y, pen: LassoPenalty) -> float:
    """Observed-data log-likelihood minus the l1 penalty."""
    return log_likelihood(model, designs, np.asarray(y, dtype=float)) - penalty_value(model, pen)


def _gating_q_pen(alpha0, zeta, R, tau, chi) -> float:
    return softmax_gating_q(alpha0, zeta, R, tau) - chi * float(np.abs(zeta).sum())


def m_step_gating_ca(
    gating: GatingParams,
    R: np.ndarray,
    tau: np.ndarray,
    chi: float,
    tol: float = INNER_TOL,
    max_outer: int = 25,
    max_halvings: int = 20,
) -> GatingParams:
    """Penalized gating update by per-gate quadratic approximation + coordinate ascent.

    Each sweep updates the gates one at a time (weights pi_k(1-pi_k), working
    responses from the current scores), then a backtracking line search blends
    the sweep output with the previous iterate so the penalized objective
    never decreases; a fully rejected sweep is a null step and stops the loop.
    """
    a = gating.alpha0.astype(float).copy()
    Z = gating.zeta.astype(float).copy()
    km1 = a.shape[0]
    if km1 == 0 or R.shape[0] == 0:
        return GatingParams(a, Z)
    q_prev = _gating_q_pen(a, Z, R, tau, chi)
    for _ in range(max_outer):
        a_bar, Z_bar = a.copy(), Z.copy()
        for k in range(km1):
            P = softmax_rows(gating_linear_predictors(a_bar, Z_bar, R))
            pik = P[:, k]
            w = np.clip(pik * (1.0 - pik), WEIGHT_CLAMP, None)
            c = a_bar[k] + R @ Z_bar[k] + (tau[:, k] - pik) / w
            # the quadratic model is rebuilt each sweep, so a shallow inner
            # cycle is enough; the outer loop owns convergence
            coef, b0, _ = coord_lasso(
                R, c, w, chi, scale=1.0, start=Z_bar[k], intercept_start=a_bar[k],
                max_sweeps=10,
            )
            Z_bar[k] = coef
            a_bar[k] = b0
        nu = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            a_new = (1.0 - nu) * a + nu * a_bar
            Z_new = (1.0 - nu) * Z + nu * Z_bar
            q_new = _gating_q_pen(a_new, Z_new, R, tau, chi)
            if q_new >= q_prev - 1e-12 * (1.0 + abs(q_prev)):
                accepted = True
                break
            nu *= 0.5
        if not accepted:
            break
        a, Z = a_new, Z_new
        if abs(q_new - q_prev) < tol * (1.0 + abs(q_prev)):
            q_prev = q_new
            break
        q_prev = q_new
    return GatingParams(a, Z)


def m_step_experts_ca(
    expert: ExpertParams,
    X: np.ndarray,
    y: np.ndarray,
    tau_k: np.ndarray,
    lam: float,
) -> ExpertParams:
    """Weighted-Lasso expert update (threshold lam * previous sigma2), then variance."""
    from .fme import check_component_mass

    n_k = float(tau_k.sum())
    check_component_mass(n_k, X.shape[1] + 1)
    coef, b0, _ = coord_lasso(
        X,
        y,
        tau_k,
        lam,
        scale=expert.sigma2,
        start=expert.eta,
        intercept_start=expert.beta0,
    )
    res = y - b0 - X @ coef
    sigma2 = max(float(tau_k @ (res * res)) / n_k, SIGMA2_FLOOR)
    return ExpertParams(beta0=float(b0), eta=coef, sigma2=sigma2)


class _LassoEngine(EmEngine):
    strict_monotone = True

    def __init__(self, designs: DesignSet, y: np.ndarray, K: int, pen: LassoPenalty, bases=None):
        self.designs = designs
        self.y = y
        self.K = K
        self.pen = pen
        self.bases = bases

    def init_model(self, tau0: np.ndarray) -> FmeModel:
        experts = []
        for k in range(self.K):
            w = tau0[:, k]
            n_k = w.sum()
            if n_k < 1e-8:
                raise EmptyComponentError(f"component {k + 1} empty at init")
            mu = float(w @ self.y) / n_k
            var = max(float(w @ (self.y - mu) ** 2) / n_k, SIGMA2_FLOOR)
            experts.append(ExpertParams(mu, np.zeros(self.designs.p), var))
        return FmeModel(
            K=self.K,
            gating=GatingParams.zeros(self.K, self.designs.q),
            experts=experts,
            bases=self.bases,
        )

    def e_step(self, model):
        return e_step(model, self.designs, self.y)

    def m_step(self, model, tau):
        experts = [
            m_step_experts_ca(model.experts[k], self.designs.x, self.y, tau[:, k], self.pen.lam)
            for k in range(self.K)
        ]
        gating = m_step_gating_ca(model.gating, self.designs.r, tau, self.pen.chi)
        return FmeModel(K=self.K, gating=gating, experts=experts, bases=model.bases)

    def objective(self, model):
        return penalized_loglik(model, self.designs, self.y, self.pen)

    def canonicalize(self, model, tau):
        def refit(gating, tau_new):
            return m_step_gating_ca(gating, self.designs.r, tau_new, self.pen.chi)

        return canonicalize_fme(model, tau, refit)


def fit_fme_lasso(
    designs: DesignSet,
    y: np.ndarray,
    K: int,
    pen: LassoPenalty,
    options: Optional[FitOptions] = None,
    bases=None,
) -> tuple[FmeModel, FitReport]:
    """EM-Lasso fit; the trace tracks the penalized log-likelihood."""
    options = options or FitOptions()
    y = np.asarray(y, dtype=float)
    if designs.n <= K:
        raise FitFailureError(f"need more than K={K} observations, got {designs.n}")
    engine = _LassoEngine(designs, y, K, pen, bases)
    model, trace, converged, tau, _ = run_em(engine, designs.n, K, options)
    ll = log_likelihood(model, designs, y)
    pen_val = penalty_value(model, pen)
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
    )
    return model, report
