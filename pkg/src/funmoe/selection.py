"""Tuning-parameter search by modified BIC and k-fold cross-validation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics as _metrics
from .designs import DesignSet
from .errors import FunmoeError, InvalidInputError, SelectionFailureError
from .fme import FitOptions, fit_fme
from .ifme import DerivativeSpec, fit_ifme
from .lasso import LassoPenalty, fit_fme_lasso

FIT_KINDS = ("fme", "fme-lasso", "ifme")


def normalize_kind(kind: str) -> str:
    kind = kind.replace("_", "-").lower()
    if kind not in FIT_KINDS:
        raise InvalidInputError(f"unknown model kind {kind!r}; pick one of {FIT_KINDS}")
    return kind


def fit_any(kind: str, designs: DesignSet, y, params: dict,
            options: Optional[FitOptions] = None, bases=None):
    """Dispatch a fit by kind with a flat parameter dict.

    Recognized keys: K, lam, chi, rho, varrho, d1, d2.
    """
    kind = normalize_kind(kind)
    K = int(params.get("K", 3))
    if kind == "fme":
        return fit_fme(designs, y, K, options=options, bases=bases)
    if kind == "fme-lasso":
        pen = LassoPenalty(float(params.get("lam", 0.0)), float(params.get("chi", 0.0)))
        return fit_fme_lasso(designs, y, K, pen, options=options, bases=bases)
    pen = LassoPenalty(float(params.get("lam", 1.0)), float(params.get("chi", 1.0)))
    spec = DerivativeSpec(
        d1=int(params.get("d1", 0)),
        d2=int(params.get("d2", 3)),
        rho=float(params.get("rho", 1e-3)),
        varrho=float(params.get("varrho", 1e2)),
    )
    return fit_ifme(designs, y, K, pen, spec=spec, options=options, bases=bases)


def default_penalty_grid(n: int, size: int = 5) -> np.ndarray:
    """Log-spaced candidate penalties 10^-3 .. 10^1 scaled by the sample count."""
    return np.geomspace(1e-3, 10.0, size) * n


@dataclass
class SelectionResult:
    model: object
    report: object
    params: dict
    table: list = field(default_factory=list)


def grid_search(
    fit_kind: str,
    designs_factory,
    y,
    grid: Sequence[dict],
    options: Optional[FitOptions] = None,
    n_jobs: int = 1,
) -> SelectionResult:
    """Fit every lattice point and keep the best modified BIC.

    designs_factory maps a parameter dict to the DesignSet to fit on (so
    basis dimensions and derivative orders can themselves be tuned); passing
    a DesignSet directly reuses it for every point. Ties break toward
    smaller df, then smaller K.
    """
    grid = list(grid)
    if not grid:
        raise InvalidInputError("empty parameter grid")
    if isinstance(designs_factory, DesignSet):
        fixed = designs_factory
        designs_factory = lambda params: fixed  # noqa: E731

    def eval_point(idx, params):
        try:
            designs = designs_factory(params)
            model, report = fit_any(fit_kind, designs, y, params, options=options)
            return idx, params, model, report, None
        except FunmoeError as exc:
            return idx, params, None, None, str(exc)

    if n_jobs != 1:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=n_jobs)(
            delayed(eval_point)(i, p) for i, p in enumerate(grid)
        )
    else:
        outs = [eval_point(i, p) for i, p in enumerate(grid)]

    table = []
    best = None
    for idx, params, model, report, err in sorted(outs, key=lambda t: t[0]):
        row = dict(params)
        if err is not None:
            row.update(failed=True, error=err)
            table.append(row)
            continue
        row.update(
            failed=False,
            df=report.df,
            loglik=report.loglik,
            bic=report.bic,
            mbic=report.mbic,
            converged=report.converged,
        )
        table.append(row)
        key = (report.mbic, -report.df, -int(params.get("K", 0)), -idx)
        if best is None or key > best[0]:
            best = (key, model, report, params)
    if best is None:
        raise SelectionFailureError("every point of the selection grid failed to fit")
    _, model, report, params = best
    return SelectionResult(model=model, report=report, params=dict(params), table=table)


@dataclass
class CvResult:
    value: float
    fold_values: list
    failed_folds: list


def kfold_cv(
    fit_kind: str,
    designs: DesignSet,
    y,
    k: int,
    metric: str = "rpe",
    params: Optional[dict] = None,
    options: Optional[FitOptions] = None,
    seed: int = 0,
) -> CvResult:
    """k-fold cross-validated prediction metric on pooled held-out predictions.

    Folds come from a seeded shuffle. The metric is computed once over all
    out-of-fold predictions, so k = n yields the leave-one-out CVRPE
    sum (y_i - yhat^(-i))^2 / sum y_i^2 exactly. Failed folds are skipped
    with a warning and excluded from the pool.
    """
    y = np.asarray(y, dtype=float)
    n = designs.n
    if k < 2 or k > n:
        raise InvalidInputError("need 2 <= k <= n folds")
    if metric not in ("rpe", "sse", "corr"):
        raise InvalidInputError(f"unsupported metric {metric!r}")
    params = params or {}
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    metric_fn = {"rpe": _metrics.rpe, "sse": _metrics.sse, "corr": _metrics.corr}[metric]

    pooled_idx, pooled_pred = [], []
    fold_values, failed = [], []
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(order, test_idx, assume_unique=True)
        try:
            model, _ = fit_any(
                fit_kind, designs.subset(train_idx), y[train_idx], params, options=options
            )
            pred = _metrics.predict_response(model, designs.subset(test_idx))
        except FunmoeError as exc:
            warnings.warn(f"fold {f} failed: {exc}", RuntimeWarning)
            failed.append(f)
            continue
        pooled_idx.append(test_idx)
        pooled_pred.append(pred)
        if test_idx.size >= 2 or metric != "corr":
            try:
                fold_values.append(metric_fn(y[test_idx], pred))
            except FunmoeError:
                fold_values.append(np.nan)
    if not pooled_idx:
        raise SelectionFailureError("every cross-validation fold failed")
    idx = np.concatenate(pooled_idx)
    pred = np.concatenate(pooled_pred)
    return CvResult(value=float(metric_fn(y[idx], pred)), fold_values=fold_values, failed_folds=failed)
