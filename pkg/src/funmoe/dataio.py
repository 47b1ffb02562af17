"""CSV and JSON reading/writing for the CLI.

Curves travel in a wide CSV: one row per observation (`id, y, z, <values>`)
whose header carries the grid times, so one file fixes one grid. Numbers in
JSON are serialized through Python's shortest round-trip repr, which
preserves every parameter bit-exactly on reload.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .basis import CurveSample, TimeGrid
from .designs import BasisConfig
from .errors import InvalidInputError
from .fme import ExpertParams, FmeModel, GatingParams
from .ifme import DerivativeSpec, IfmeExpertParams, IfmeGatingParams, IfmeModel
from .lasso import LassoPenalty


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# Curves CSV
# ---------------------------------------------------------------------------

def write_curves_csv(path, grid: TimeGrid, values: np.ndarray,
                     y: Optional[np.ndarray] = None, z: Optional[np.ndarray] = None) -> None:
    values = np.atleast_2d(values)
    n = values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "y", "z"] + [_fmt(t) for t in grid.points])
        for i in range(n):
            y_cell = "" if y is None or not np.isfinite(y[i]) else _fmt(y[i])
            z_cell = "" if z is None or z[i] <= 0 else str(int(z[i]))
            writer.writerow([str(i), y_cell, z_cell] + [_fmt(v) for v in values[i]])


def read_curves_csv(path):
    """Parse a curves CSV into (curves, grid, values, y, z).

    y entries are NaN and z entries 0 where the file leaves them blank.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 5 or header[:3] != ["id", "y", "z"]:
        raise InvalidInputError(
            f"{path}: header must start with id,y,z followed by at least two grid times"
        )
    try:
        times = np.array([float(h) for h in header[3:]])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric grid time in header: {exc}") from exc
    grid = TimeGrid(times)
    m = len(times)
    n = len(rows) - 1
    if n == 0:
        raise InvalidInputError(f"{path}: no observations")
    values = np.empty((n, m))
    y = np.full(n, np.nan)
    z = np.zeros(n, dtype=int)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != m + 3:
            raise InvalidInputError(
                f"{path}: row {r} has {len(row)} cells, expected {m + 3}"
            )
        try:
            if row[1] != "":
                y[r - 2] = float(row[1])
            if row[2] != "":
                z[r - 2] = int(row[2])
            values[r - 2] = [float(c) for c in row[3:]]
        except ValueError as exc:
            raise InvalidInputError(f"{path}: row {r}: {exc}") from exc
    curves = [
        CurveSample(
            grid=grid,
            values=values[i],
            response=None if np.isnan(y[i]) else float(y[i]),
            label=None if z[i] == 0 else int(z[i]),
        )
        for i in range(n)
    ]
    return curves, grid, values, y, z


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def _pyify(obj):
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_pyify(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot parse {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def _bases_dict(bases: Optional[BasisConfig]):
    if bases is None:
        return None
    return {
        "r": bases.r, "p": bases.p, "q": bases.q,
        "degree": bases.degree, "domain": list(bases.domain),
    }


def _bases_from(d) -> Optional[BasisConfig]:
    if d is None:
        return None
    return BasisConfig(
        r=int(d["r"]), p=int(d["p"]), q=int(d["q"]),
        degree=int(d["degree"]), domain=tuple(d["domain"]),
    )


def model_to_dict(model, kind: str, pen: Optional[LassoPenalty] = None) -> dict:
    out = {"kind": kind, "K": model.K, "bases": _bases_dict(model.bases)}
    if pen is not None:
        out["penalty"] = {"lam": pen.lam, "chi": pen.chi}
    if isinstance(model, IfmeModel):
        out["spec"] = {
            "d1": model.spec.d1, "d2": model.spec.d2,
            "rho": model.spec.rho, "varrho": model.spec.varrho,
        }
        out["gating"] = {
            "alpha0": model.gating.alpha0,
            "omega_d1": model.gating.omega_d1,
            "omega_d2": model.gating.omega_d2,
        }
        out["experts"] = [
            {"beta0": e.beta0, "gamma_d1": e.gamma_d1,
             "gamma_d2": e.gamma_d2, "sigma2": e.sigma2}
            for e in model.experts
        ]
    else:
        out["gating"] = {"alpha0": model.gating.alpha0, "zeta": model.gating.zeta}
        out["experts"] = [
            {"beta0": e.beta0, "eta": e.eta, "sigma2": e.sigma2}
            for e in model.experts
        ]
    return _pyify(out)


def model_from_dict(d):
    """Rebuild (model, kind, penalty) from a model JSON dict."""
    try:
        kind = d["kind"]
        bases = _bases_from(d.get("bases"))
        pen = None
        if d.get("penalty") is not None:
            pen = LassoPenalty(float(d["penalty"]["lam"]), float(d["penalty"]["chi"]))
        if kind == "ifme":
            from .basis import derivative_matrices, make_bspline_basis

            spec = DerivativeSpec(
                d1=int(d["spec"]["d1"]), d2=int(d["spec"]["d2"]),
                rho=float(d["spec"]["rho"]), varrho=float(d["spec"]["varrho"]),
            )
            if bases is None:
                raise InvalidInputError("ifme model JSON must record its bases")
            gating = IfmeGatingParams(
                alpha0=np.array(d["gating"]["alpha0"], dtype=float),
                omega_d1=np.array(d["gating"]["omega_d1"], dtype=float),
                omega_d2=np.array(d["gating"]["omega_d2"], dtype=float),
            )
            experts = [
                IfmeExpertParams(
                    beta0=float(e["beta0"]),
                    gamma_d1=np.array(e["gamma_d1"], dtype=float),
                    gamma_d2=np.array(e["gamma_d2"], dtype=float),
                    sigma2=float(e["sigma2"]),
                )
                for e in d["experts"]
            ]
            dmP = derivative_matrices(
                make_bspline_basis(bases.p, bases.degree, bases.domain), spec.d1, spec.d2
            )
            dmQ = derivative_matrices(
                make_bspline_basis(bases.q, bases.degree, bases.domain), spec.d1, spec.d2
            )
            model = IfmeModel(
                K=int(d["K"]), gating=gating, experts=experts,
                spec=spec, dmP=dmP, dmQ=dmQ, bases=bases,
            )
        else:
            gating = GatingParams(
                alpha0=np.array(d["gating"]["alpha0"], dtype=float),
                zeta=np.array(d["gating"]["zeta"], dtype=float),
            )
            experts = [
                ExpertParams(
                    beta0=float(e["beta0"]),
                    eta=np.array(e["eta"], dtype=float),
                    sigma2=float(e["sigma2"]),
                )
                for e in d["experts"]
            ]
            model = FmeModel(K=int(d["K"]), gating=gating, experts=experts, bases=bases)
        return model, kind, pen
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model JSON: {exc}") from exc


def report_to_dict(report) -> dict:
    return _pyify(
        {
            "loglik_trace": report.loglik_trace,
            "iterations": report.iterations,
            "converged": report.converged,
            "df": report.df,
            "bic": report.bic,
            "mbic": report.mbic,
            "loglik": report.loglik,
            "penalized_loglik": report.penalized_loglik,
            "n_surrogate_gaps": len(report.surrogate_gaps),
        }
    )


# ---------------------------------------------------------------------------
# Predictions CSV
# ---------------------------------------------------------------------------

def write_predictions_csv(path, yhat: np.ndarray, tau: np.ndarray, labels: np.ndarray) -> None:
    K = tau.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "yhat"] + [f"tau_{k + 1}" for k in range(K)] + ["label"])
        for i in range(len(yhat)):
            writer.writerow(
                [str(i), _fmt(yhat[i])] + [_fmt(t) for t in tau[i]] + [str(int(labels[i]))]
            )


def read_predictions_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if not rows or len(rows[0]) < 3 or rows[0][0] != "id" or rows[0][1] != "yhat":
        raise InvalidInputError(f"{path}: not a predictions CSV")
    K = len(rows[0]) - 3
    n = len(rows) - 1
    yhat = np.empty(n)
    tau = np.empty((n, K))
    labels = np.empty(n, dtype=int)
    for r, row in enumerate(rows[1:]):
        yhat[r] = float(row[1])
        tau[r] = [float(c) for c in row[2 : 2 + K]]
        labels[r] = int(row[-1])
    return yhat, tau, labels
