"""Command-line surface: simulate, fit, predict, evaluate, select.

Exit codes: 0 success, 2 input/schema error, 3 numerical failure,
4 selection failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .basis import even_grid, reconstruct_function
from .designs import BasisConfig, build_designs, extend_for_ifme
from .errors import (
    FunmoeError,
    InvalidInputError,
    NumericalError,
    SelectionFailureError,
)
from .fme import FitOptions, FmeModel
from .ifme import IfmeModel, reconstruct_networks
from .metrics import (
    MetricReport,
    adjusted_rand,
    cluster_error,
    corr,
    map_cluster,
    posterior_memberships,
    predict_conditional,
    predict_response,
    rand_index,
    rpe,
    sse,
)
from .selection import fit_any, grid_search, normalize_kind
from .simulate import ScenarioConfig, simulate_dataset

RECONSTRUCTION_GRID_SIZE = 200


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funmoe",
        description="Mixtures of experts for curve predictors: simulate, fit, predict, evaluate, select.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--scenario", default="S1", help="S1..S4 or 'custom'")
    p_sim.add_argument("--n", type=int, default=800)
    p_sim.add_argument("--m", type=int, default=100, help="grid length (custom scenario)")
    p_sim.add_argument("--sigma2-delta", type=float, default=1.0, help="noise variance (custom)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a model to a curves CSV")
    _add_model_flags(p_fit)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config", default=None, help="JSON file with fit parameters")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict responses with a fitted model")
    p_pred.add_argument("--model-json", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True, help="output CSV path")
    p_pred.add_argument("--mode", choices=("marginal", "conditional"), default="marginal")
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score predictions against a truth CSV")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", required=True, help="output JSON path")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sel = sub.add_parser("select", help="grid search ranked by modified BIC")
    _add_model_flags(p_sel)
    p_sel.add_argument("--data", required=True)
    p_sel.add_argument("--grid", required=True, help="JSON file of parameter lists")
    p_sel.add_argument("--out", required=True, help="output directory")
    p_sel.set_defaults(func=cmd_select)
    return parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="fme | fme-lasso | ifme")
    p.add_argument("--k", type=int, default=None, dest="K")
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--chi", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--varrho", type=float, default=None)
    p.add_argument("--d1", type=int, default=None)
    p.add_argument("--d2", type=int, default=None)
    p.add_argument("--basis-dims", default=None, help="r,p,q (e.g. 10,10,10)")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)


def _merge_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(dataio.read_json(args.config))
    if "lambda" in cfg:
        cfg["lam"] = cfg.pop("lambda")
    for key in ("K", "lam", "chi", "rho", "varrho", "d1", "d2", "tol", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "max_iter", None) is not None:
        cfg["max_iter"] = args.max_iter
    if getattr(args, "starts", None) is not None:
        cfg["n_starts"] = args.starts
    if getattr(args, "basis_dims", None):
        parts = str(args.basis_dims).split(",")
        if len(parts) != 3:
            raise InvalidInputError("--basis-dims expects three comma-separated integers r,p,q")
        cfg["basis_dims"] = [int(v) for v in parts]
    return cfg


def _options_from(cfg: dict, threads: int) -> FitOptions:
    return FitOptions(
        tol=float(cfg.get("tol", 1e-6)),
        max_iter=int(cfg.get("max_iter", 500)),
        n_starts=int(cfg.get("n_starts", 10)),
        seed=int(cfg.get("seed", 0)),
        n_jobs=threads,
    )


def _bases_from_cfg(cfg: dict) -> BasisConfig:
    dims = cfg.get("basis_dims", [10, 10, 10])
    return BasisConfig(r=int(dims[0]), p=int(dims[1]), q=int(dims[2]))


def _designs_for(kind: str, curves, bases: BasisConfig, cfg: dict):
    basis_r, basis_p, basis_q = bases.build()
    designs = build_designs(curves, basis_r, basis_p, basis_q)
    if kind == "ifme":
        from .basis import derivative_matrices

        d1 = int(cfg.get("d1", 0))
        d2 = int(cfg.get("d2", 3))
        dmP = derivative_matrices(basis_p, d1, d2)
        dmQ = derivative_matrices(basis_q, d1, d2)
        designs = extend_for_ifme(designs, dmP, dmQ)
    return designs


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario == "custom":
        config = ScenarioConfig(
            n=args.n, m=args.m, sigma2_delta=args.sigma2_delta, seed=args.seed
        )
    else:
        config = ScenarioConfig.preset(args.scenario, n=args.n, seed=args.seed)
    data = simulate_dataset(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noisy = np.vstack([c.values for c in data.curves])
    dataio.write_curves_csv(out / "curves.csv", data.grid, noisy, data.y, data.labels)
    nets = config.true_params
    truth = {
        "scenario": args.scenario,
        "n": config.n,
        "m": config.m,
        "sigma2_delta": config.sigma2_delta,
        "K": config.K,
        "seed": config.seed,
        "grid": data.grid.points,
        "labels": data.labels,
        "y": data.y,
        "beta0": nets.beta0,
        "sigma2": nets.sigma2,
        "alpha0": nets.alpha0,
        "beta_on_grid": [f(data.grid.points) for f in nets.beta_funcs],
        "alpha_on_grid": [f(data.grid.points) for f in nets.alpha_funcs],
    }
    dataio.write_json(out / "truth.json", truth)
    return 0


def cmd_fit(args) -> int:
    kind = normalize_kind(args.model)
    cfg = _merge_config(args)
    curves, grid, _, y, _ = dataio.read_curves_csv(args.data)
    if np.any(np.isnan(y)):
        raise InvalidInputError("fitting needs a y value on every row")
    bases = _bases_from_cfg(cfg)
    designs = _designs_for(kind, curves, bases, cfg)
    options = _options_from(cfg, args.threads)
    model, report = fit_any(kind, designs, y, cfg, options=options, bases=bases)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pen = None
    if kind != "fme":
        from .lasso import LassoPenalty

        default_lam = 0.0 if kind == "fme-lasso" else 1.0
        pen = LassoPenalty(
            float(cfg.get("lam", default_lam)), float(cfg.get("chi", default_lam))
        )
    dataio.write_json(out / "model.json", dataio.model_to_dict(model, kind, pen))
    dataio.write_json(out / "report.json", dataio.report_to_dict(report))
    _write_coefficient_csv(out / "coefficients.csv", model)
    return 0


def _write_coefficient_csv(path, model) -> None:
    import csv

    domain = model.bases.domain if model.bases is not None else (0.0, 1.0)
    grid = even_grid(RECONSTRUCTION_GRID_SIZE, domain)
    if isinstance(model, IfmeModel):
        alpha_hat, beta_hat = reconstruct_networks(model, grid)
    else:
        _, basis_p, basis_q = model.bases.build()
        beta_hat = np.vstack(
            [reconstruct_function(e.eta, basis_p, grid) for e in model.experts]
        )
        if model.K > 1:
            alpha_hat = np.vstack(
                [
                    reconstruct_function(model.gating.zeta[k], basis_q, grid)
                    for k in range(model.K - 1)
                ]
            )
        else:
            alpha_hat = np.zeros((0, len(grid)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (
            ["t"]
            + [f"beta_{k + 1}" for k in range(beta_hat.shape[0])]
            + [f"alpha_{k + 1}" for k in range(alpha_hat.shape[0])]
        )
        writer.writerow(header)
        for j, t in enumerate(grid.points):
            row = [repr(float(t))]
            row += [repr(float(v)) for v in beta_hat[:, j]]
            row += [repr(float(v)) for v in alpha_hat[:, j]]
            writer.writerow(row)


def cmd_predict(args) -> int:
    model, kind, _ = dataio.model_from_dict(dataio.read_json(args.model_json))
    if model.bases is None:
        raise InvalidInputError("model JSON lacks basis dimensions")
    curves, grid, _, y, _ = dataio.read_curves_csv(args.data)
    cfg = {}
    if isinstance(model, IfmeModel):
        cfg = {"d1": model.spec.d1, "d2": model.spec.d2}
    designs = _designs_for(kind, curves, model.bases, cfg)
    have_y = not np.any(np.isnan(y))
    if args.mode == "conditional":
        if not have_y:
            raise InvalidInputError("conditional prediction needs a y column")
        yhat = predict_conditional(model, designs, y)
    else:
        yhat = predict_response(model, designs)
    if have_y:
        tau = posterior_memberships(model, designs, y)
    else:
        from .metrics import _gate_probs

        tau = _gate_probs(model, designs)
    labels = map_cluster(tau)
    dataio.write_predictions_csv(args.out, yhat, tau, labels)
    return 0


def cmd_evaluate(args) -> int:
    yhat, _, labels = dataio.read_predictions_csv(args.pred)
    _, _, _, y, z = dataio.read_curves_csv(args.truth)
    if len(y) != len(yhat):
        raise InvalidInputError(
            f"prediction rows ({len(yhat)}) and truth rows ({len(y)}) differ"
        )
    report = MetricReport()
    if not np.any(np.isnan(y)):
        report.rpe = rpe(y, yhat)
        report.corr = corr(y, yhat)
        report.sse = sse(y, yhat)
    if np.all(z > 0):
        report.ri = rand_index(z, labels)
        report.ari = adjusted_rand(z, labels)
        report.clus_err = cluster_error(z, labels)
    dataio.write_json(
        args.out,
        {
            "rpe": report.rpe,
            "corr": report.corr,
            "sse": report.sse,
            "ri": report.ri,
            "ari": report.ari,
            "clus_err": report.clus_err,
        },
    )
    return 0


def _expand_grid(grid_cfg: dict) -> list[dict]:
    from itertools import product

    if "lambda" in grid_cfg:
        grid_cfg["lam"] = grid_cfg.pop("lambda")
    keys = sorted(grid_cfg)
    lists = [grid_cfg[k] if isinstance(grid_cfg[k], list) else [grid_cfg[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in product(*lists)]


def cmd_select(args) -> int:
    kind = normalize_kind(args.model)
    cfg = _merge_config(args)
    curves, grid, _, y, _ = dataio.read_curves_csv(args.data)
    if np.any(np.isnan(y)):
        raise InvalidInputError("selection needs a y value on every row")
    lattice = _expand_grid(dataio.read_json(args.grid))
    bases = _bases_from_cfg(cfg)
    options = _options_from(cfg, 1)

    def factory(params):
        merged = dict(cfg)
        merged.update(params)
        b = bases
        if "basis_dims" in merged and merged["basis_dims"] is not None:
            dims = merged["basis_dims"]
            b = BasisConfig(r=int(dims[0]), p=int(dims[1]), q=int(dims[2]))
        return _designs_for(kind, curves, b, merged)

    full_grid = []
    for params in lattice:
        merged = {k: v for k, v in cfg.items() if k in ("K", "lam", "chi", "rho", "varrho", "d1", "d2")}
        merged.update(params)
        full_grid.append(merged)
    result = grid_search(kind, factory, y, full_grid, options=options, n_jobs=args.threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_json(
        out / "selection.json",
        {"selected": result.params, "mbic": result.report.mbic, "df": result.report.df},
    )
    import csv as _csv

    cols = sorted({k for row in result.table for k in row})
    with open(out / "table.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(cols)
        for row in result.table:
            writer.writerow([row.get(c, "") for c in cols])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SelectionFailureError as exc:
        print(f"selection failed: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FunmoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
