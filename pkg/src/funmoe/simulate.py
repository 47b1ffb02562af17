"""Synthetic data generator: hierarchical curves -> labels -> responses -> noise.

Predictors are random expansions in a 10-dimensional cubic B-spline basis,
labels are drawn from gates driven by integrals of the curve against the true
gating functions, responses are Gaussian around the per-cluster functional
regression mean, and the analyst only sees a noisy sampled version of each
curve. Scenario presets S1..S4 vary the grid length and the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import BSplineBasis, CurveSample, TimeGrid, even_grid, make_bspline_basis
from .errors import InvalidInputError

PRESETS = {
    "S1": {"m": 100, "sigma2_delta": 1.0},
    "S2": {"m": 50, "sigma2_delta": 1.0},
    "S3": {"m": 100, "sigma2_delta": 4.0},
    "S4": {"m": 50, "sigma2_delta": 4.0},
}


@dataclass
class TrueNetworks:
    """Ground-truth expert and gating functions of the generator."""

    beta_funcs: Sequence[Callable[[np.ndarray], np.ndarray]]
    beta0: np.ndarray
    sigma2: np.ndarray
    alpha_funcs: Sequence[Callable[[np.ndarray], np.ndarray]]
    alpha0: np.ndarray

    @property
    def K(self) -> int:
        return len(self.beta_funcs)


def _beta1(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(
        t < 0.3,
        -50.0 * (t - 0.5) ** 2 + 4.0,
        np.where(t < 0.7, 0.0, 50.0 * (t - 0.5) ** 2 - 4.0),
    )


def _beta2(t):
    return -_beta1(t)


def _beta3(t):
    t = np.asarray(t, dtype=float)
    return 100.0 * (t - 0.5) ** 2 - 10.0


def _alpha1(t):
    t = np.asarray(t, dtype=float)
    return 80.0 * (t - 0.5) ** 2 - 8.0


def _alpha2(t):
    return -_alpha1(t)


def _alpha3(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def default_networks() -> TrueNetworks:
    """The three-component ground truth: two mirrored piecewise experts with a
    flat stretch on [0.3, 0.7), one global quadratic, quadratic gates."""
    return TrueNetworks(
        beta_funcs=[_beta1, _beta2, _beta3],
        beta0=np.array([-5.0, 0.0, 5.0]),
        sigma2=np.array([5.0, 5.0, 5.0]),
        alpha_funcs=[_alpha1, _alpha2, _alpha3],
        alpha0=np.array([-10.0, -10.0, 0.0]),
    )


@dataclass
class ScenarioConfig:
    """One simulation setting; presets follow the S1..S4 grid."""

    n: int = 800
    m: int = 100
    sigma2_delta: float = 1.0
    K: int = 3
    seed: int = 0
    true_params: TrueNetworks = field(default_factory=default_networks)
    predictor_dim: int = 10
    coef_variance: float = 10.0    # variance of the latent normal coefficients

    @classmethod
    def preset(cls, name: str, n: int = 800, seed: int = 0) -> "ScenarioConfig":
        if name not in PRESETS:
            raise InvalidInputError(f"unknown scenario {name!r}; pick one of {sorted(PRESETS)}")
        return cls(n=n, seed=seed, **PRESETS[name])


@dataclass
class SimulatedDataset:
    """Noisy observed curves plus everything the generator knew."""

    curves: list[CurveSample]
    clean: np.ndarray               # n x m noise-free curve values
    y: np.ndarray
    labels: np.ndarray              # true clusters, 1-based
    grid: TimeGrid
    config: ScenarioConfig


def gen_predictors(n: int, basis: BSplineBasis, rng: np.random.Generator,
                   coef_variance: float = 10.0) -> np.ndarray:
    """Coefficient matrix (n x dim) of the clean curves: rows x_i = W v_i.

    W is one uniform(0,1) dim x dim draw per dataset; the v_i are i.i.d.
    centered normal with the given variance.
    """
    dim = basis.dimension
    W = rng.uniform(size=(dim, dim))
    V = rng.normal(0.0, np.sqrt(coef_variance), size=(n, dim))
    return V @ W.T


def _riemann_integrals(clean: np.ndarray, grid: TimeGrid, funcs) -> np.ndarray:
    """n x K matrix of sum_j X_i(t_j) f_k(t_j) dt_j."""
    w = grid.riemann_weights
    F = np.column_stack([f(grid.points) for f in funcs])
    return clean @ (F * w[:, None])


def gen_labels(clean: np.ndarray, grid: TimeGrid, networks: TrueNetworks,
               rng: np.random.Generator) -> np.ndarray:
    """Multinomial cluster draw from the softmax of the true gate scores."""
    H = networks.alpha0[None, :] + _riemann_integrals(clean, grid, networks.alpha_funcs)
    H -= H.max(axis=1, keepdims=True)
    P = np.exp(H)
    P /= P.sum(axis=1, keepdims=True)
    u = rng.random(clean.shape[0])
    cum = np.cumsum(P, axis=1)
    labels = (u[:, None] > cum).sum(axis=1) + 1
    return labels.astype(int)


def gen_responses(clean: np.ndarray, grid: TimeGrid, labels: np.ndarray,
                  networks: TrueNetworks, rng: np.random.Generator) -> np.ndarray:
    """Gaussian responses around the per-cluster functional regression mean."""
    integrals = _riemann_integrals(clean, grid, networks.beta_funcs)
    z = labels - 1
    mean = networks.beta0[z] + integrals[np.arange(clean.shape[0]), z]
    sd = np.sqrt(networks.sigma2[z])
    return mean + sd * rng.standard_normal(clean.shape[0])


def add_noise(clean: np.ndarray, sigma2_delta: float, rng: np.random.Generator) -> np.ndarray:
    """Pointwise i.i.d. centered Gaussian measurement noise."""
    if sigma2_delta == 0:
        return clean.copy()
    return clean + np.sqrt(sigma2_delta) * rng.standard_normal(clean.shape)


def simulate_dataset(config: ScenarioConfig) -> SimulatedDataset:
    """Run the full generative pipeline, deterministic given config.seed."""
    rng = np.random.default_rng(config.seed)
    grid = even_grid(config.m)
    basis = make_bspline_basis(config.predictor_dim)
    coefs = gen_predictors(config.n, basis, rng, config.coef_variance)
    clean = coefs @ basis.evaluate_many(grid.points).T
    labels = gen_labels(clean, grid, config.true_params, rng)
    y = gen_responses(clean, grid, labels, config.true_params, rng)
    noisy = add_noise(clean, config.sigma2_delta, rng)
    curves = [
        CurveSample(grid=grid, values=noisy[i], response=float(y[i]), label=int(labels[i]))
        for i in range(config.n)
    ]
    return SimulatedDataset(
        curves=curves, clean=clean, y=y, labels=labels, grid=grid, config=config
    )
