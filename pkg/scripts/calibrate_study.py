"""Prototype of the S1 replicate study used by the acceptance suite."""

import sys
import time
import warnings

import numpy as np

warnings.simplefilter("ignore")

from funmoe import (
    BasisConfig,
    DerivativeSpec,
    FitOptions,
    LassoPenalty,
    ScenarioConfig,
    build_designs,
    derivative_matrices,
    extend_for_ifme,
    fit_fme,
    fit_fme_lasso,
    fit_ifme,
    simulate_dataset,
)
from funmoe.basis import reconstruct_function
from funmoe.ifme import reconstruct_networks
from funmoe.metrics import (
    adjusted_rand,
    functional_mse,
    map_cluster,
    posterior_memberships,
    predict_conditional,
    rpe,
)

FME_DIMS = (6, 8, 10)
LASSO_PENS = (LassoPenalty(0.05, 0.05), LassoPenalty(0.3, 0.3))
IFME_PENS = (LassoPenalty(5.0, 2.0), LassoPenalty(20.0, 2.0), LassoPenalty(20.0, 6.0))
SPEC = DerivativeSpec(0, 3, 1e-3, 1e2)


def run_replicate(seed, n=800, n_starts=10):
    cfg = ScenarioConfig.preset("S1", n=n, seed=seed)
    data = simulate_dataset(cfg)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train, test = perm[: n // 2], perm[n // 2 :]
    grid = data.grid
    nets = cfg.true_params
    flat = (grid.points >= 0.3) & (grid.points < 0.7)
    beta_true = [f(grid.points) for f in nets.beta_funcs]
    out = {"seed": seed}

    cache = {}
    for dim in FME_DIMS:
        bc = BasisConfig(10, dim, dim)
        br, bp, bq = bc.build()
        designs = build_designs(data.curves, br, bp, bq)
        cache[dim] = (bc, bp, bq, designs)

    def evaluate(model, designs, recon):
        dtest = designs.subset(test)
        tau = posterior_memberships(model, dtest, data.y[test])
        ari = adjusted_rand(data.labels[test], map_cluster(tau))
        rc = rpe(data.y[test], predict_conditional(model, dtest, data.y[test]))
        beta_hat = recon()
        mse0 = functional_mse(beta_true[0][flat], beta_hat[0][flat]) + functional_mse(
            beta_true[1][flat], beta_hat[1][flat]
        )
        return {
            "ari": ari,
            "rpe": rc,
            "mse0": mse0,
            "beta0": [e.beta0 for e in model.experts],
            "sigma2": [e.sigma2 for e in model.experts],
        }

    # FME across dims by mBIC
    best = None
    for dim in FME_DIMS:
        bc, bp, bq, designs = cache[dim]
        model, rep = fit_fme(
            designs.subset(train), data.y[train], 3,
            FitOptions(n_starts=n_starts, seed=seed), bases=bc,
        )
        if best is None or rep.mbic > best[0]:
            best = (rep.mbic, dim, model)
    _, dim_star, model = best
    bc, bp, bq, designs = cache[dim_star]
    out["fme"] = evaluate(
        model, designs,
        lambda: np.vstack([reconstruct_function(e.eta, bp, grid) for e in model.experts]),
    )
    out["fme"]["dim"] = dim_star

    # FME-Lasso at the FME-selected dims
    best = None
    for pen in LASSO_PENS:
        model_l, rep = fit_fme_lasso(
            designs.subset(train), data.y[train], 3, pen,
            FitOptions(n_starts=n_starts, seed=seed), bases=bc,
        )
        if best is None or rep.mbic > best[0]:
            best = (rep.mbic, pen, model_l)
    _, pen_star, model_l = best
    out["lasso"] = evaluate(
        model_l, designs,
        lambda: np.vstack([reconstruct_function(e.eta, bp, grid) for e in model_l.experts]),
    )
    out["lasso"]["pen"] = (pen_star.lam, pen_star.chi)

    # iFME at dims (10, 8, 8)
    bc8, bp8, bq8, designs8 = cache[8]
    dmP = derivative_matrices(bp8, SPEC.d1, SPEC.d2)
    dmQ = derivative_matrices(bq8, SPEC.d1, SPEC.d2)
    ext = extend_for_ifme(designs8, dmP, dmQ)
    best = None
    for pen in IFME_PENS:
        model_i, rep = fit_ifme(
            ext.subset(train), data.y[train], 3, pen, SPEC,
            FitOptions(n_starts=5, seed=seed, max_iter=60),
            dmP=dmP, dmQ=dmQ, bases=bc8,
        )
        if best is None or rep.mbic > best[0]:
            best = (rep.mbic, pen, model_i)
    _, pen_star, model_i = best
    out["ifme"] = evaluate(
        model_i, ext, lambda: reconstruct_networks(model_i, grid)[1]
    )
    out["ifme"]["pen"] = (pen_star.lam, pen_star.chi)
    return out


if __name__ == "__main__":
    n_rep = int(sys.argv[1]) if len(sys.argv) > 1 else 6
    rows = []
    t0 = time.time()
    for seed in range(n_rep):
        t1 = time.time()
        row = run_replicate(seed)
        rows.append(row)
        f, l, i = row["fme"], row["lasso"], row["ifme"]
        print(
            f"seed {seed}: dim*={f['dim']} "
            f"ARI {f['ari']:.3f}/{l['ari']:.3f}/{i['ari']:.3f}  "
            f"RPE {f['rpe']:.3f}/{l['rpe']:.3f}/{i['rpe']:.3f}  "
            f"MSE0 {f['mse0']:.2f}/{l['mse0']:.2f}/{i['mse0']:.2f}  "
            f"ifme_pen={i['pen']} [{time.time()-t1:.0f}s]",
            flush=True,
        )
    print(f"total {time.time()-t0:.0f}s")
    for kind in ("fme", "lasso", "ifme"):
        ari = np.mean([r[kind]["ari"] for r in rows])
        rc = np.mean([r[kind]["rpe"] for r in rows])
        b0 = np.mean([r[kind]["beta0"] for r in rows], axis=0)
        s2 = np.mean([r[kind]["sigma2"] for r in rows], axis=0)
        print(f"{kind:6s}: mean ARI {ari:.3f} mean RPE {rc:.3f} mean beta0 {np.round(b0,2)} mean sig2 {np.round(s2,2)}")
    wins = np.mean([r["ifme"]["mse0"] < r["fme"]["mse0"] for r in rows])
    print(f"iFME flat-region wins vs FME: {wins*100:.0f}%")
