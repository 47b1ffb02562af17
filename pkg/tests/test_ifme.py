import numpy as np
import pytest

from funmoe.basis import derivative_matrices, even_grid, make_bspline_basis
from funmoe.designs import BasisConfig, DesignSet, build_designs, extend_for_ifme
from funmoe.errors import InvalidInputError
from funmoe.fme import FitOptions, fit_fme, log_likelihood
from funmoe.ifme import (
    DerivativeSpec,
    IfmeExpertParams,
    IfmeGatingParams,
    IfmeModel,
    e_step_ifme,
    fit_ifme,
    ifme_density,
    ifme_penalty,
    m_step_experts_dantzig,
    m_step_gating_dantzig,
    reconstruct_networks,
)
from funmoe.lasso import LassoPenalty
from funmoe.optim import dantzig_solve, softmax_gating_q


def make_dm(p, d1=0, d2=3):
    return derivative_matrices(make_bspline_basis(p, 3), d1, d2)


def random_ifme(rng, K=3, p=5, q=4, spec=None):
    spec = spec or DerivativeSpec(0, 3, 1e-3, 1e2)
    dmP, dmQ = make_dm(p), make_dm(q)
    Cp, Cq = dmP.constraint_map(), dmQ.constraint_map()
    experts = []
    for _ in range(K):
        g1 = rng.standard_normal(p)
        experts.append(
            IfmeExpertParams(
                beta0=float(rng.standard_normal()),
                gamma_d1=g1,
                gamma_d2=Cp @ g1,
                sigma2=float(rng.uniform(0.5, 2.0)),
            )
        )
    W1 = rng.standard_normal((K - 1, q))
    gating = IfmeGatingParams(rng.standard_normal(K - 1), W1, W1 @ Cq.T)
    return IfmeModel(
        K=K, gating=gating, experts=experts, spec=spec, dmP=dmP, dmQ=dmQ,
        bases=BasisConfig(max(p, q), p, q),
    )


def ifme_designs(rng, n, p=5, q=4):
    return DesignSet(
        x=np.zeros((n, p)),
        r=np.zeros((n, q)),
        xhat=np.zeros((n, 1)),
        v=rng.standard_normal((n, p)),
        s=rng.standard_normal((n, q)),
    )


class TestDerivativeSpec:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            DerivativeSpec(2, 1)
        with pytest.raises(InvalidInputError):
            DerivativeSpec(0, 3, rho=-1.0)


class TestDensity:
    def test_single_component_gaussian(self, rng):
        model = random_ifme(rng, K=1)
        ex = model.experts[0]
        v = rng.standard_normal(5)
        y = ex.beta0 + ex.gamma_d1 @ v  # at the mean
        val = ifme_density(model, v, np.zeros(4), float(y))
        assert abs(val - 1.0 / np.sqrt(2 * np.pi * ex.sigma2)) < 1e-12

    def test_zero_params_give_uniform_gates(self, rng):
        model = random_ifme(rng, K=3)
        model.gating.alpha0[:] = 0.0
        model.gating.omega_d1[:] = 0.0
        designs = ifme_designs(rng, 5)
        from funmoe.metrics import _gate_probs

        P = _gate_probs(model, designs)
        np.testing.assert_allclose(P, 1.0 / 3.0, atol=1e-12)

    def test_matches_naive_sum(self, rng):
        model = random_ifme(rng)
        v = rng.standard_normal(5)
        s = rng.standard_normal(4)
        y = rng.standard_normal()
        scores = np.concatenate(
            [model.gating.alpha0 + model.gating.omega_d1 @ s, [0.0]]
        )
        pis = np.exp(scores) / np.exp(scores).sum()
        naive = sum(
            pis[k]
            * np.exp(-0.5 * (y - ex.beta0 - ex.gamma_d1 @ v) ** 2 / ex.sigma2)
            / np.sqrt(2 * np.pi * ex.sigma2)
            for k, ex in enumerate(model.experts)
        )
        assert abs(ifme_density(model, v, s, y) - naive) < 1e-12


class TestPenalty:
    def test_zero(self, rng):
        model = random_ifme(rng)
        for ex in model.experts:
            ex.gamma_d1[:] = 0.0
            ex.gamma_d2[:] = 0.0
        model.gating.omega_d1[:] = 0.0
        model.gating.omega_d2[:] = 0.0
        assert ifme_penalty(model, LassoPenalty(1.0, 1.0)) == 0.0

    def test_hand_computed_single_coefficient(self):
        p, q = 5, 4
        spec = DerivativeSpec(0, 3, rho=0.5, varrho=2.0)
        dmP, dmQ = make_dm(p), make_dm(q)
        Cp = dmP.constraint_map()
        g1 = np.zeros(p)
        g1[0] = 2.0
        expert = IfmeExpertParams(0.0, g1, Cp @ g1, 1.0)
        gating = IfmeGatingParams(np.zeros(0), np.zeros((0, q)), np.zeros((0, q)))
        model = IfmeModel(1, gating, [expert], spec, dmP, dmQ)
        expected = 1.0 * (2.0 + 0.5 * np.abs(Cp @ g1).sum())
        assert abs(ifme_penalty(model, LassoPenalty(1.0, 7.0)) - expected) < 1e-12

    def test_small_d2_weights_reduce_to_d1_penalty(self, rng):
        spec = DerivativeSpec(0, 3, rho=1e-300, varrho=1e-300)
        model = random_ifme(rng, spec=spec)
        pen = LassoPenalty(1.0, 1.0)
        d1_only = sum(np.abs(e.gamma_d1).sum() for e in model.experts) + np.abs(
            model.gating.omega_d1
        ).sum()
        assert abs(ifme_penalty(model, pen) - d1_only) < 1e-10


class TestEStep:
    def test_rows_sum_to_one_and_match_bayes(self, rng):
        model = random_ifme(rng)
        designs = ifme_designs(rng, 12)
        y = rng.standard_normal(12)
        tau = e_step_ifme(model, designs, y)
        np.testing.assert_allclose(tau.sum(axis=1), 1.0, atol=1e-10)
        for i in range(12):
            dens = np.array(
                [
                    ifme_density(model, designs.v[i], designs.s[i], y[i]),
                ]
            )
            # per-component numerators
            scores = np.concatenate(
                [model.gating.alpha0 + model.gating.omega_d1 @ designs.s[i], [0.0]]
            )
            pis = np.exp(scores) / np.exp(scores).sum()
            num = np.array(
                [
                    pis[k]
                    * np.exp(
                        -0.5
                        * (y[i] - ex.beta0 - ex.gamma_d1 @ designs.v[i]) ** 2
                        / ex.sigma2
                    )
                    / np.sqrt(2 * np.pi * ex.sigma2)
                    for k, ex in enumerate(model.experts)
                ]
            )
            np.testing.assert_allclose(tau[i], num / num.sum(), atol=1e-12)


class TestGatingDantzig:
    def test_constraint_residual_certificate(self, rng):
        n, q = 150, 4
        S = rng.standard_normal((n, q))
        dmQ = make_dm(q)
        Cq = dmQ.constraint_map()
        spec = DerivativeSpec(0, 3, 1e-3, 1e2)
        # responsibilities from a known sparse gating
        w_true = np.array([[1.5, 0.0, 0.0, -1.0]])
        scores = np.column_stack([0.5 + S @ w_true[0], np.zeros(n)])
        P = np.exp(scores - scores.max(1, keepdims=True))
        P /= P.sum(1, keepdims=True)
        tau = P
        chi = 1.0
        pik = np.full(n, 0.5)
        w = pik * (1 - pik)
        c = (tau[:, 0] - pik) / w
        sw = np.sqrt(w)
        Xw = np.hstack([sw[:, None], sw[:, None] * S, np.zeros((n, q))])
        cw = sw * c
        A = np.hstack([np.zeros((q, 1)), Cq, -np.eye(q)])
        omega_w = np.concatenate([[0.0], np.ones(q), spec.varrho * np.ones(q)])
        coef, used = dantzig_solve(Xw, cw, omega_w, A, chi)
        resid = np.abs(Xw.T @ (cw - Xw @ coef)).max()
        assert resid <= used + 1e-7
        np.testing.assert_allclose(A @ coef, 0.0, atol=1e-8)

    def test_huge_chi_keeps_zero_gate(self, rng):
        n, q = 60, 4
        S = rng.standard_normal((n, q))
        dmQ = make_dm(q)
        tau = rng.dirichlet(np.ones(2), size=n)
        g0 = IfmeGatingParams.zeros(2, q)
        got = m_step_gating_dantzig(
            g0, S, tau, 1e8, DerivativeSpec(0, 3, 1e-3, 1e2), dmQ
        )
        np.testing.assert_array_equal(got.omega_d1, 0.0)

    def test_unconstrained_reduction_matches_plain_dantzig(self, rng):
        # with the d2 rows removed the LP reduces to a plain Dantzig selector
        n, d = 40, 3
        M = rng.standard_normal((n, d))
        c = rng.standard_normal(n)
        bound = 1.0
        coef_plain, _ = dantzig_solve(M, c, np.ones(d), None, bound)
        X2 = np.hstack([M, np.zeros((n, d))])
        A = np.hstack([np.zeros((d, d)), -np.eye(d)])  # forces the dead block to 0
        coef_ext, _ = dantzig_solve(X2, c, np.concatenate([np.ones(d), np.zeros(d)]), A, bound)
        lp_obj_plain = np.abs(coef_plain).sum()
        lp_obj_ext = np.abs(coef_ext[:d]).sum()
        assert abs(lp_obj_plain - lp_obj_ext) < 1e-7
        np.testing.assert_allclose(coef_ext[d:], 0.0, atol=1e-9)

    def test_gating_objective_does_not_decrease(self, rng):
        n, q = 120, 4
        S = rng.standard_normal((n, q))
        dmQ = make_dm(q)
        spec = DerivativeSpec(0, 3, 1e-3, 1e2)
        tau = rng.dirichlet(np.ones(3), size=n)
        g = IfmeGatingParams.zeros(3, q)

        def qpen(g):
            return softmax_gating_q(g.alpha0, g.omega_d1, S, tau) - 2.0 * (
                np.abs(g.omega_d1).sum() + spec.varrho * np.abs(g.omega_d2).sum()
            )

        before = qpen(g)
        got = m_step_gating_dantzig(g, S, tau, 2.0, spec, dmQ)
        assert qpen(got) >= before - 1e-9 * (1 + abs(before))


class TestExpertsDantzig:
    def test_flat_region_zeros_on_noiseless_cluster(self, rng):
        # single cluster generated from a coefficient image that vanishes on
        # the middle of the domain; adequate lambda recovers those zeros
        n, p = 300, 8
        dmP = make_dm(p)
        # small rho keeps the emphasis on zeroth-derivative sparsity
        spec = DerivativeSpec(0, 3, 1e-4, 1e2)
        V = rng.standard_normal((n, p))
        g_true = np.array([3.0, 1.5, 0.0, 0.0, 0.0, 0.0, -1.5, -3.0])
        y = 1.0 + V @ g_true  # noiseless
        start = IfmeExpertParams(0.0, np.zeros(p), np.zeros(p), 1.0)
        got = m_step_experts_dantzig(start, V, y, np.ones(n), 5.0, spec, dmP)
        assert np.abs(got.gamma_d1[2:6]).max() < 1e-6
        assert np.abs(got.gamma_d1[0]) > 1.0

    def test_huge_lambda_gives_weighted_mean(self, rng):
        n, p = 80, 5
        dmP = make_dm(p)
        V = rng.standard_normal((n, p))
        y = rng.standard_normal(n) + 3.0
        tau_k = rng.uniform(0.5, 1.0, n)
        start = IfmeExpertParams(0.0, np.zeros(p), np.zeros(p), 2.0)
        got = m_step_experts_dantzig(
            start, V, y, tau_k, 1e9, DerivativeSpec(0, 3, 1e-3, 1e2), dmP
        )
        np.testing.assert_allclose(got.gamma_d1, 0.0, atol=1e-9)
        assert abs(got.beta0 - tau_k @ y / tau_k.sum()) < 1e-6

    def test_equality_residual_always_tiny(self, rng):
        n, p = 100, 6
        dmP = make_dm(p)
        spec = DerivativeSpec(0, 3, 1e-3, 1e2)
        V = rng.standard_normal((n, p))
        y = V @ rng.standard_normal(p) + 0.3 * rng.standard_normal(n)
        start = IfmeExpertParams(0.0, np.zeros(p), np.zeros(p), 1.0)
        for lam in (0.5, 2.0, 10.0):
            got = m_step_experts_dantzig(start, V, y, np.ones(n), lam, spec, dmP)
            resid = got.gamma_d2 - dmP.constraint_map() @ got.gamma_d1
            assert np.abs(resid).max() <= 1e-8


class TestFitIfme:
    def test_k1_small_penalty_matches_linear_fit(self, rng):
        n, p, q = 150, 5, 5
        designs = ifme_designs(rng, n, p, q)
        # make x/r designs consistent with v/s through the derivative maps
        dmP, dmQ = make_dm(p), make_dm(q)
        designs = DesignSet(
            x=designs.v @ dmP.A_d1,
            r=designs.s @ dmQ.A_d1,
            xhat=designs.xhat,
            v=designs.v,
            s=designs.s,
        )
        y = 2.0 + designs.v @ np.array([1.0, -0.5, 0.0, 0.5, 1.0]) + 0.3 * rng.standard_normal(n)
        spec = DerivativeSpec(0, 3, 1e-3, 1e2)
        model, rep = fit_ifme(
            designs, y, 1, LassoPenalty(1e-4, 1e-4), spec,
            FitOptions(n_starts=1, seed=0, max_iter=50), dmP=dmP, dmQ=dmQ,
        )
        fme_model, fme_rep = fit_fme(designs, y, 1, FitOptions(n_starts=1, seed=0))
        # the derivative-parameterized mean must match the plain linear fit
        mean_ifme = model.experts[0].beta0 + designs.v @ model.experts[0].gamma_d1
        mean_fme = fme_model.experts[0].beta0 + designs.x @ fme_model.experts[0].eta
        rel = np.abs(mean_ifme - mean_fme).max() / (1 + np.abs(mean_fme).max())
        assert rel < 0.05

    def test_trace_final_at_least_initial(self, s1_small):
        import warnings

        data, designs = s1_small
        bc = BasisConfig(10, 8, 8)
        _, bp, bq = bc.build()
        dmP = derivative_matrices(bp, 0, 3)
        dmQ = derivative_matrices(bq, 0, 3)
        ext = extend_for_ifme(designs, dmP, dmQ)
        idx = np.arange(0, designs.n, 3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, rep = fit_ifme(
                ext.subset(idx), data.y[idx], 2, LassoPenalty(5.0, 2.0),
                DerivativeSpec(0, 3, 1e-3, 1e2),
                FitOptions(n_starts=2, seed=0, max_iter=30),
                dmP=dmP, dmQ=dmQ, bases=bc,
            )
        tr = rep.loglik_trace
        assert tr[-1] >= tr[0]
        # constraints hold at the final iterate
        for ex in model.experts:
            resid = ex.gamma_d2 - dmP.constraint_map() @ ex.gamma_d1
            assert np.abs(resid).max() <= 1e-8
        resid = model.gating.omega_d2 - model.gating.omega_d1 @ dmQ.constraint_map().T
        assert np.abs(resid).max() <= 1e-8


class TestReconstructNetworks:
    def test_round_trip_identity(self, rng):
        p, q = 6, 5
        dmP, dmQ = make_dm(p), make_dm(q)
        bc = BasisConfig(8, p, q)
        _, bp, bq = bc.build()
        eta = rng.standard_normal(p)
        zeta = rng.standard_normal(q)
        spec = DerivativeSpec(0, 3, 1e-3, 1e2)
        expert = IfmeExpertParams(0.0, dmP.A_d1 @ eta, dmP.A_d2 @ eta, 1.0)
        gating = IfmeGatingParams(
            np.zeros(1), (dmQ.A_d1 @ zeta)[None, :], (dmQ.A_d2 @ zeta)[None, :]
        )
        model = IfmeModel(2, gating, [expert, expert], spec, dmP, dmQ, bases=bc)
        grid = even_grid(50)
        alpha_hat, beta_hat = reconstruct_networks(model, grid)
        from funmoe.basis import reconstruct_function

        np.testing.assert_allclose(beta_hat[0], reconstruct_function(eta, bp, grid), atol=1e-8)
        np.testing.assert_allclose(alpha_hat[0], reconstruct_function(zeta, bq, grid), atol=1e-8)

    def test_zero_coefficients_give_zero_functions(self, rng):
        model = random_ifme(rng)
        for ex in model.experts:
            ex.gamma_d1[:] = 0.0
        model.gating.omega_d1[:] = 0.0
        alpha_hat, beta_hat = reconstruct_networks(model, even_grid(20))
        np.testing.assert_allclose(beta_hat, 0.0, atol=1e-12)
        np.testing.assert_allclose(alpha_hat, 0.0, atol=1e-12)
