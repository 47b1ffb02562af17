"""Softmax-gated mixture of functional linear experts, fit by EM.

The model density for one observation is a gate-weighted sum of Gaussian
experts whose means are linear in the expert design x_i; the gates are a
softmax over the gating design r_i with the last component pinned to zero.
This module also hosts the generic EM driver reused by the penalized fitters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import metrics as _metrics
from .designs import BasisConfig, DesignSet
from .errors import (
    EmptyComponentError,
    FitFailureError,
    NrFailureError,
    NumericalError,
    NumericUnderflowError,
)
from .optim import (
    CONVERGENCE_TOL,
    INNER_TOL,
    gating_linear_predictors,
    maximize_gating_q,
    softmax_rows,
    weighted_ols,
)

SIGMA2_FLOOR = 1e-8
MONOTONE_SLACK = 1e-8


@dataclass
class ExpertParams:
    """One Gaussian expert: intercept, coefficient vector, noise variance."""

    beta0: float
    eta: np.ndarray
    sigma2: float

    def order_key(self):
        return (self.beta0, *map(float, self.eta), self.sigma2)


@dataclass
class GatingParams:
    """K-1 free softmax gates; component K is implicitly zero."""

    alpha0: np.ndarray          # (K-1,)
    zeta: np.ndarray            # (K-1, q)

    @property
    def n_components(self) -> int:
        return self.alpha0.shape[0] + 1

    @staticmethod
    def zeros(K: int, q: int) -> "GatingParams":
        return GatingParams(np.zeros(K - 1), np.zeros((K - 1, q)))


@dataclass
class FmeModel:
    """Full parameter vector of the (possibly Lasso-penalized) functional ME model."""

    K: int
    gating: GatingParams
    experts: list[ExpertParams]
    bases: Optional[BasisConfig] = None

    # -- designs hooks shared with the metrics module -------------------------
    def gate_design(self, designs: DesignSet) -> np.ndarray:
        return designs.r

    def expert_design(self, designs: DesignSet) -> np.ndarray:
        return designs.x

    def gate_scores(self, designs: DesignSet) -> np.ndarray:
        return gating_linear_predictors(
            self.gating.alpha0, self.gating.zeta, self.gate_design(designs)
        )

    def component_means(self, designs: DesignSet) -> np.ndarray:
        X = self.expert_design(designs)
        M = np.empty((X.shape[0], self.K))
        for k, ex in enumerate(self.experts):
            M[:, k] = ex.beta0 + X @ ex.eta
        return M

    def sigma2_vector(self) -> np.ndarray:
        return np.array([ex.sigma2 for ex in self.experts])


@dataclass
class FitOptions:
    """Knobs of the EM fitters; defaults follow the implemented protocol."""

    tol: float = CONVERGENCE_TOL
    max_iter: int = 500
    n_starts: int = 10
    seed: int = 0
    n_jobs: int = 1


@dataclass
class FitReport:
    """Fit diagnostics: objective trace, posteriors, clusters, df and criteria."""

    loglik_trace: list
    tau: np.ndarray
    labels: np.ndarray
    iterations: int
    converged: bool
    df: int
    bic: float
    mbic: float
    loglik: float
    penalized_loglik: Optional[float] = None
    surrogate_gaps: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Mixture machinery (generic over FME and iFME models via the hooks above)
# ---------------------------------------------------------------------------

def log_obs_matrix(model, designs: DesignSet, y: np.ndarray) -> np.ndarray:
    """n x K matrix of log[pi_k(design_i) * phi(y_i; mean_ik, sigma2_k)]."""
    H = model.gate_scores(designs)
    log_pi = H - logsumexp(H, axis=1, keepdims=True)
    M = model.component_means(designs)
    sig2 = model.sigma2_vector()
    log_phi = -0.5 * (y[:, None] - M) ** 2 / sig2 - 0.5 * np.log(2.0 * np.pi * sig2)
    return log_pi + log_phi


def gating_probs(gating: GatingParams, r_i: np.ndarray) -> np.ndarray:
    """Gate probabilities for one gating design vector."""
    H = gating_linear_predictors(gating.alpha0, gating.zeta, np.atleast_2d(r_i))
    return softmax_rows(H)[0]


def gating_matrix(gating: GatingParams, R: np.ndarray) -> np.ndarray:
    """Gate probabilities row by row (n x K)."""
    return softmax_rows(gating_linear_predictors(gating.alpha0, gating.zeta, R))


def fme_density(model: FmeModel, x_i, r_i, y_i: float) -> float:
    """Mixture density of one observation, computed in log space."""
    one = DesignSet(
        x=np.atleast_2d(np.asarray(x_i, dtype=float)),
        r=np.atleast_2d(np.asarray(r_i, dtype=float)),
        xhat=np.zeros((1, 1)),
    )
    L = log_obs_matrix(model, one, np.array([float(y_i)]))
    return float(np.exp(logsumexp(L[0])))


def log_likelihood(model, designs: DesignSet, y: np.ndarray) -> float:
    """Observed-data log-likelihood, log-sum-exp stabilized."""
    if y.size == 0:
        return 0.0
    return float(logsumexp(log_obs_matrix(model, designs, y), axis=1).sum())


def e_step(model, designs: DesignSet, y: np.ndarray) -> np.ndarray:
    """Posterior component memberships tau_ik; rows sum to one."""
    L = log_obs_matrix(model, designs, y)
    lse = logsumexp(L, axis=1)
    if np.any(~np.isfinite(lse)):
        raise NumericUnderflowError("all component densities vanished for some row")
    return np.exp(L - lse[:, None])


def check_component_mass(n_k: float, n_coefs: int, k: Optional[int] = None) -> None:
    """Reject components whose effective sample cannot identify the expert.

    Fewer effective observations than regression coefficients lets weighted
    least squares interpolate, collapsing sigma2 to the floor and creating
    spurious likelihood spikes; such a component is treated like an empty one
    so the restart logic kicks in.
    """
    if n_k < max(n_coefs + 1, 1):
        which = "a component" if k is None else f"component {k + 1}"
        raise EmptyComponentError(
            f"{which} holds {n_k:.2f} effective observations for "
            f"{n_coefs} coefficients"
        )


def _fit_experts_wols(X: np.ndarray, y: np.ndarray, tau: np.ndarray) -> list[ExpertParams]:
    """Per-component weighted OLS on the intercept-augmented design."""
    n, _ = X.shape
    Xa = np.column_stack([np.ones(n), X])
    experts = []
    for k in range(tau.shape[1]):
        w = tau[:, k]
        n_k = w.sum()
        check_component_mass(n_k, Xa.shape[1], k)
        b = weighted_ols(Xa, y, w)
        res = y - Xa @ b
        sigma2 = max(float(w @ (res * res)) / n_k, SIGMA2_FLOOR)
        experts.append(ExpertParams(beta0=float(b[0]), eta=b[1:].copy(), sigma2=sigma2))
    return experts


def m_step(model: FmeModel, designs: DesignSet, y: np.ndarray, tau: np.ndarray) -> FmeModel:
    """Exact M-step: weighted OLS experts, Newton-Raphson gating."""
    experts = _fit_experts_wols(designs.x, y, tau)
    alpha0, zeta = maximize_gating_q(
        model.gating.alpha0, model.gating.zeta, designs.r, tau
    )
    return FmeModel(
        K=model.K,
        gating=GatingParams(alpha0, zeta),
        experts=experts,
        bases=model.bases,
    )


# ---------------------------------------------------------------------------
# Generic EM driver
# ---------------------------------------------------------------------------

class EmEngine:
    """Hooks a model family plugs into the EM driver.

    Subclasses bind the data and implement init_model/e_step/m_step/objective
    plus the canonicalization pieces. strict_monotone engines treat any
    objective decrease beyond tolerance as an error; the others record it.
    """

    strict_monotone = True

    def init_model(self, tau0: np.ndarray):
        raise NotImplementedError

    def e_step(self, model) -> np.ndarray:
        raise NotImplementedError

    def m_step(self, model, tau: np.ndarray):
        raise NotImplementedError

    def objective(self, model) -> float:
        raise NotImplementedError

    def canonicalize(self, model, tau: np.ndarray):
        raise NotImplementedError


def _initial_partition(rng: np.random.Generator, n: int, K: int) -> np.ndarray:
    """Random hard assignment with every component guaranteed non-empty."""
    labels = rng.integers(0, K, size=n)
    anchors = rng.choice(n, size=K, replace=False)
    labels[anchors] = np.arange(K)
    return labels


def _one_em_start(engine: EmEngine, n: int, K: int, options: FitOptions, start: int):
    """One random restart; returns (model, trace, converged, gaps) or an error."""
    rng = np.random.default_rng((options.seed, start))
    labels = _initial_partition(rng, n, K)
    tau0 = np.zeros((n, K))
    tau0[np.arange(n), labels] = 1.0
    try:
        model = engine.init_model(tau0)
        model = engine.m_step(model, tau0)
        prev = engine.objective(model)
        trace = [prev]
        converged = False
        gaps = []
        for it in range(1, options.max_iter + 1):
            tau = engine.e_step(model)
            model = engine.m_step(model, tau)
            cur = engine.objective(model)
            if cur < prev - MONOTONE_SLACK * (1.0 + abs(prev)):
                if engine.strict_monotone:
                    raise NumericalError(
                        f"EM objective decreased at iteration {it}: {prev} -> {cur}"
                    )
                gaps.append((it, prev, cur))
            trace.append(cur)
            if abs(cur - prev) < options.tol * (1.0 + abs(prev)):
                converged = True
                break
            prev = cur
        return model, trace, converged, gaps
    except (EmptyComponentError, NumericUnderflowError, NrFailureError) as exc:
        return exc


def run_em(engine: EmEngine, n: int, K: int, options: FitOptions):
    """Best-of-restarts EM; returns (model, trace, converged, tau, gaps)."""
    max_attempts = 2 * options.n_starts
    results = {}
    if options.n_jobs != 1:
        from joblib import Parallel, delayed

        first = Parallel(n_jobs=options.n_jobs)(
            delayed(_one_em_start)(engine, n, K, options, s)
            for s in range(options.n_starts)
        )
        for s, out in enumerate(first):
            if not isinstance(out, Exception):
                results[s] = out
        if len(results) < options.n_starts:
            retries = Parallel(n_jobs=options.n_jobs)(
                delayed(_one_em_start)(engine, n, K, options, s)
                for s in range(options.n_starts, max_attempts)
            )
            for s, out in enumerate(retries, start=options.n_starts):
                if not isinstance(out, Exception):
                    results[s] = out
        results = dict(sorted(results.items())[: options.n_starts])
    else:
        s = 0
        while s < max_attempts and len(results) < options.n_starts:
            out = _one_em_start(engine, n, K, options, s)
            if not isinstance(out, Exception):
                results[s] = out
            s += 1
    if not results:
        raise FitFailureError("every EM restart failed (empty components)")
    best_start = max(results, key=lambda s: (results[s][1][-1], -s))
    model, trace, converged, gaps = results[best_start]
    tau = engine.e_step(model)
    model = engine.canonicalize(model, tau)
    tau = engine.e_step(model)
    return model, trace, converged, tau, gaps


# -- expert reordering and gating relabeling --------------------------------

def _lexicographic_order(experts) -> list[int]:
    return sorted(range(len(experts)), key=lambda k: experts[k].order_key())


def _shift_gating(alpha0: np.ndarray, coefs: np.ndarray, order: list[int]):
    """Exact softmax relabeling: gates follow the expert permutation.

    With extended parameters (component K pinned at zero), permuting the
    components and re-zeroing the new last gate leaves every gate probability
    unchanged because the softmax is shift-invariant.
    """
    K = len(order)
    a_ext = np.concatenate([alpha0, [0.0]])
    c_ext = np.vstack([coefs, np.zeros((1, coefs.shape[1]))])
    a_perm = a_ext[order]
    c_perm = c_ext[order]
    return a_perm[:-1] - a_perm[-1], c_perm[:-1] - c_perm[-1]


def canonicalize_fme(
    model: FmeModel,
    tau: np.ndarray,
    refit_gating: Optional[Callable[[GatingParams, np.ndarray], GatingParams]] = None,
) -> FmeModel:
    """Order experts lexicographically, relabel the gates, optionally refit them."""
    order = _lexicographic_order(model.experts)
    if order != list(range(model.K)):
        alpha0, zeta = _shift_gating(model.gating.alpha0, model.gating.zeta, order)
        model = FmeModel(
            K=model.K,
            gating=GatingParams(alpha0, zeta),
            experts=[model.experts[k] for k in order],
            bases=model.bases,
        )
        tau = tau[:, order]
    if refit_gating is not None:
        model = replace(model, gating=refit_gating(model.gating, tau))
    return model


class _FmeEngine(EmEngine):
    strict_monotone = True

    def __init__(self, designs: DesignSet, y: np.ndarray, K: int, bases=None):
        self.designs = designs
        self.y = y
        self.K = K
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
        return m_step(model, self.designs, self.y, tau)

    def objective(self, model):
        return log_likelihood(model, self.designs, self.y)

    def canonicalize(self, model, tau):
        def refit(gating, tau_new):
            a, z = maximize_gating_q(gating.alpha0, gating.zeta, self.designs.r, tau_new)
            return GatingParams(a, z)

        return canonicalize_fme(model, tau, refit)


def fit_fme(
    designs: DesignSet,
    y: np.ndarray,
    K: int,
    options: Optional[FitOptions] = None,
    bases=None,
) -> tuple[FmeModel, FitReport]:
    """Maximum-likelihood fit of the functional mixture of experts.

    Runs n_starts random-partition restarts of EM and keeps the best final
    log-likelihood; experts are reordered lexicographically afterwards.
    """
    options = options or FitOptions()
    y = np.asarray(y, dtype=float)
    if designs.n <= K:
        raise FitFailureError(f"need more than K={K} observations, got {designs.n}")
    engine = _FmeEngine(designs, y, K, bases)
    model, trace, converged, tau, _ = run_em(engine, designs.n, K, options)
    ll = log_likelihood(model, designs, y)
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
        penalized_loglik=ll,
    )
    return model, report
