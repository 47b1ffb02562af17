"""Prediction, clustering and evaluation metrics, plus df / BIC counting.

Model objects are used through three small hooks (gate_scores,
component_means, sigma2_vector) so the same code serves the plain, Lasso and
derivative-sparse fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, log

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import InvalidInputError, UndefinedMetricError
from .optim import ZERO_COEF_TOL


@dataclass
class MetricReport:
    """Bundle of regression and clustering scores for one evaluation."""

    rpe: float | None = None
    corr: float | None = None
    sse: float | None = None
    ri: float | None = None
    ari: float | None = None
    clus_err: float | None = None
    mse_by_function: dict = field(default_factory=dict)


def map_cluster(tau: np.ndarray) -> np.ndarray:
    """Maximum-posterior labels (1-based); ties go to the lowest component."""
    return np.argmax(tau, axis=1) + 1


def _gate_probs(model, designs) -> np.ndarray:
    H = model.gate_scores(designs)
    return np.exp(H - logsumexp(H, axis=1, keepdims=True))


def predict_response(model, designs) -> np.ndarray:
    """Mixture-mean prediction: gate-weighted sum of expert means."""
    P = _gate_probs(model, designs)
    M = model.component_means(designs)
    return (P * M).sum(axis=1)


def posterior_memberships(model, designs, y: np.ndarray) -> np.ndarray:
    """tau_ik given the observed responses (Bayes rule over components)."""
    H = model.gate_scores(designs)
    log_pi = H - logsumexp(H, axis=1, keepdims=True)
    M = model.component_means(designs)
    sig2 = model.sigma2_vector()
    L = log_pi - 0.5 * (y[:, None] - M) ** 2 / sig2 - 0.5 * np.log(2.0 * np.pi * sig2)
    return np.exp(L - logsumexp(L, axis=1, keepdims=True))


def predict_conditional(model, designs, y_true: np.ndarray) -> np.ndarray:
    """Expert-mean prediction for the component most responsible given y_true."""
    tau = posterior_memberships(model, designs, np.asarray(y_true, dtype=float))
    M = model.component_means(designs)
    pick = np.argmax(tau, axis=1)
    return M[np.arange(M.shape[0]), pick]


# ---------------------------------------------------------------------------
# Regression metrics
# ---------------------------------------------------------------------------

def rpe(y: np.ndarray, yhat: np.ndarray) -> float:
    """Relative prediction error sum (y - yhat)^2 / sum y^2."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    denom = float(y @ y)
    if denom <= 0:
        raise UndefinedMetricError("RPE undefined: responses are all zero")
    return float(((y - yhat) ** 2).sum()) / denom


def corr(y: np.ndarray, yhat: np.ndarray) -> float:
    """Pearson correlation between observed and predicted responses."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.size < 2:
        raise UndefinedMetricError("correlation needs at least two points")
    sy = y.std()
    sh = yhat.std()
    if sy == 0 or sh == 0:
        raise UndefinedMetricError("correlation undefined for constant vectors")
    return float(((y - y.mean()) * (yhat - yhat.mean())).mean() / (sy * sh))


def sse(y: np.ndarray, yhat: np.ndarray) -> float:
    """Sum of squared errors."""
    d = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return float(d @ d)


# ---------------------------------------------------------------------------
# Clustering metrics
# ---------------------------------------------------------------------------

def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError("partitions must have equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    C = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(C, (ai, bi), 1)
    return C


def rand_index(a, b) -> float:
    """Pair-counting Rand index in [0, 1]."""
    C = _contingency(a, b)
    n = int(C.sum())
    total = comb(n, 2)
    if total == 0:
        return 1.0
    same_same = sum(comb(int(x), 2) for x in C.ravel())
    same_a = sum(comb(int(x), 2) for x in C.sum(axis=1))
    same_b = sum(comb(int(x), 2) for x in C.sum(axis=0))
    disagree = (same_a - same_same) + (same_b - same_same)
    return (total - disagree) / total


def adjusted_rand(a, b) -> float:
    """Hubert-Arabie adjusted Rand index (chance-corrected, <= 1)."""
    C = _contingency(a, b)
    n = int(C.sum())
    total = comb(n, 2)
    if total == 0:
        return 1.0
    idx = sum(comb(int(x), 2) for x in C.ravel())
    sa = sum(comb(int(x), 2) for x in C.sum(axis=1))
    sb = sum(comb(int(x), 2) for x in C.sum(axis=0))
    expected = sa * sb / total
    maximum = 0.5 * (sa + sb)
    if maximum == expected:
        return 1.0
    return (idx - expected) / (maximum - expected)


def cluster_error(a, b) -> float:
    """1 - best-matching accuracy over all relabelings (optimal assignment)."""
    C = _contingency(a, b)
    r, c = linear_sum_assignment(C, maximize=True)
    return 1.0 - C[r, c].sum() / C.sum()


def functional_mse(g_true: np.ndarray, g_hat: np.ndarray) -> float:
    """Mean squared error between two functions sampled on the same grid."""
    g_true = np.asarray(g_true, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if g_true.shape != g_hat.shape:
        raise InvalidInputError("functions sampled on different grids")
    return float(((g_true - g_hat) ** 2).mean())


# ---------------------------------------------------------------------------
# Degrees of freedom and (modified) BIC
# ---------------------------------------------------------------------------

def _nonzero(v: np.ndarray) -> int:
    return int((np.abs(np.asarray(v, dtype=float)) > ZERO_COEF_TOL).sum())


def count_df(model) -> int:
    """Nonzero free coefficients + intercepts + variances.

    Expert/gating coefficient blocks are the eta/zeta vectors for the plain
    and Lasso models, and only the first-derivative blocks for the
    derivative-sparse model (the second block is constrained, hence not free).
    """
    K = model.K
    df_gates = 0
    gating = model.gating
    gate_block = gating.zeta if hasattr(gating, "zeta") else gating.omega_d1
    for k in range(K - 1):
        df_gates += _nonzero(gate_block[k])
    df_experts = 0
    for ex in model.experts:
        coef = ex.eta if hasattr(ex, "eta") else ex.gamma_d1
        df_experts += _nonzero(coef)
    return df_gates + (K - 1) + df_experts + K + K


def count_total_params(model) -> int:
    """Raw parameter count: every free coefficient, zero or not."""
    K = model.K
    gating = model.gating
    gate_block = gating.zeta if hasattr(gating, "zeta") else gating.omega_d1
    q = gate_block.shape[1]
    ex = model.experts[0]
    p = (ex.eta if hasattr(ex, "eta") else ex.gamma_d1).shape[0]
    return (K - 1) * (q + 1) + K * (p + 2)


def df_and_mbic(model, loglik: float, n: int):
    """(df, mbic, bic) from the log-likelihood at the fitted parameters.

    Both criteria use the unpenalized log-likelihood evaluated at the fitted
    (possibly penalized) estimator. The modified BIC counts only nonzero free
    coefficients as df; the classical BIC charges every parameter. For a
    dense unpenalized fit the two coincide.
    """
    df = count_df(model)
    half_log_n = 0.5 * log(n)
    mbic = loglik - df * half_log_n
    bic = loglik - count_total_params(model) * half_log_n
    return df, mbic, bic
