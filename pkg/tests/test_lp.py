"""Simplex solver and Dantzig-selector LP construction."""

import itertools

import numpy as np
import pytest

from funmoe.errors import InvalidInputError
from funmoe.optim import (
    LinearProgram,
    dantzig_lp_build,
    dantzig_solve,
    soft_threshold,
    solve_lp,
)


def enumerate_vertices(lp: LinearProgram):
    """Brute-force oracle: best objective over all basic feasible points.

    Stacks every constraint (inequalities as potential active rows, equalities
    always active, variable bounds as rows) and solves each full-rank square
    subset; keeps feasible solutions.
    """
    n = lp.objective.size
    rows, rhs, always = [], [], []
    if lp.A_eq is not None:
        for i in range(lp.A_eq.shape[0]):
            always.append(len(rows))
            rows.append(lp.A_eq[i])
            rhs.append(lp.b_eq[i])
    if lp.A_ub is not None:
        for i in range(lp.A_ub.shape[0]):
            rows.append(lp.A_ub[i])
            rhs.append(lp.b_ub[i])
    lb = lp.lb
    ub = lp.ub if lp.ub is not None else np.full(n, np.inf)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append(e)
        rhs.append(lb[j])
        if np.isfinite(ub[j]):
            rows.append(e)
            rhs.append(ub[j])
    rows = np.array(rows)
    rhs = np.array(rhs)
    free = [i for i in range(len(rows)) if i not in always]
    best = None
    need = n - len(always)
    for combo in itertools.combinations(free, need):
        idx = list(always) + list(combo)
        A = rows[idx]
        if np.linalg.matrix_rank(A) < n:
            continue
        try:
            z = np.linalg.solve(A, rhs[idx])
        except np.linalg.LinAlgError:
            continue
        ok = True
        if lp.A_ub is not None and np.any(lp.A_ub @ z > lp.b_ub + 1e-9):
            ok = False
        if lp.A_eq is not None and np.any(np.abs(lp.A_eq @ z - lp.b_eq) > 1e-9):
            ok = False
        if np.any(z < lb - 1e-9) or np.any(z > ub + 1e-9):
            ok = False
        if ok:
            val = float(lp.objective @ z)
            if best is None or val < best:
                best = val
    return best


def random_bounded_lp(rng, max_vars=8, max_cons=10, with_eq=True):
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_cons + 1))
    A = rng.standard_normal((m, n))
    z0 = rng.uniform(0.2, 1.5, n)
    b = A @ z0 + rng.uniform(0.05, 1.0, m)
    ub = rng.uniform(2.0, 4.0, n)
    c = rng.standard_normal(n)
    A_eq = b_eq = None
    if with_eq and n >= 3 and rng.random() < 0.4:
        A_eq = rng.standard_normal((1, n))
        b_eq = A_eq @ z0
    return LinearProgram(objective=c, A_ub=A, b_ub=b, A_eq=A_eq, b_eq=b_eq, ub=ub)


class TestSolveLp:
    def test_simple_maximization(self):
        sol = solve_lp(LinearProgram(objective=[-1.0], A_ub=[[1.0]], b_ub=[1.0]))
        assert sol.status == "optimal"
        np.testing.assert_allclose(sol.z, [1.0], atol=1e-10)
        assert abs(sol.objective_value + 1.0) < 1e-10

    def test_contradictory_equalities_infeasible(self):
        lp = LinearProgram(
            objective=[0.0, 0.0],
            A_eq=[[1.0, 0.0], [1.0, 0.0]],
            b_eq=[1.0, 2.0],
        )
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        assert solve_lp(LinearProgram(objective=[-1.0, 0.0])).status == "unbounded"

    def test_degenerate_problem_terminates(self):
        # multiple redundant constraints through the optimum
        lp = LinearProgram(
            objective=[-1.0, -1.0],
            A_ub=[[1.0, 1.0], [1.0, 1.0], [2.0, 2.0], [1.0, 0.0]],
            b_ub=[1.0, 1.0, 2.0, 1.0],
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert abs(sol.objective_value + 1.0) < 1e-9

    def test_lower_bound_shift(self):
        lp = LinearProgram(
            objective=[1.0], A_ub=[[-1.0]], b_ub=[-2.0], lb=np.array([1.5])
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        np.testing.assert_allclose(sol.z, [2.0], atol=1e-9)

    def test_feasibility_residuals(self, rng):
        for _ in range(25):
            lp = random_bounded_lp(rng)
            sol = solve_lp(lp)
            assert sol.status == "optimal"
            assert np.all(lp.A_ub @ sol.z <= lp.b_ub + 1e-8)
            if lp.A_eq is not None:
                assert np.abs(lp.A_eq @ sol.z - lp.b_eq).max() < 1e-8
            assert np.all(sol.z >= -1e-9)

    def test_against_vertex_enumeration(self, rng):
        for _ in range(60):
            lp = random_bounded_lp(rng, max_vars=5, max_cons=6)
            sol = solve_lp(lp)
            oracle = enumerate_vertices(lp)
            assert sol.status == "optimal"
            assert oracle is not None
            assert abs(sol.objective_value - oracle) < 1e-7 * (1 + abs(oracle))


class TestDantzigLp:
    def test_zero_response_gives_zero_solution(self, rng):
        X = rng.standard_normal((20, 3))
        lp = dantzig_lp_build(X, np.zeros(20), np.ones(3), None, bound=0.5)
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert abs(sol.objective_value) < 1e-9
        np.testing.assert_allclose(sol.z[:3] - sol.z[3:], 0.0, atol=1e-9)

    def test_orthonormal_single_variable_shrinkage(self):
        # with x'x = 1 the Dantzig solution equals the soft-thresholded
        # correlation (closed form for orthonormal designs)
        x = np.zeros(4)
        x[0] = 1.0
        for target, bound in [(2.0, 0.5), (-1.2, 0.3), (0.2, 0.5)]:
            c = target * x
            coef, _ = dantzig_solve(x[:, None], c, np.ones(1), None, bound)
            assert abs(coef[0] - soft_threshold(target, bound)) < 1e-8

    def test_constraint_block_and_residual_certificate(self, rng):
        n, d = 30, 4
        M = rng.standard_normal((n, d))
        X = np.hstack([M, np.zeros((n, d))])
        c = rng.standard_normal(n)
        C = rng.standard_normal((d, d))
        A = np.hstack([C, -np.eye(d)])
        bound = 2.0
        coef, used = dantzig_solve(X, c, np.ones(2 * d), A, bound)
        assert used == bound
        # Dantzig feasibility certificate
        resid = X.T @ (c - X @ coef)
        assert np.abs(resid).max() <= bound + 1e-7
        # equality block certificate
        np.testing.assert_allclose(A @ coef, 0.0, atol=1e-8)

    def test_unpenalized_intercept_weight(self, rng):
        n = 40
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        c = 3.0 + 0.0 * X[:, 1] + 0.1 * rng.standard_normal(n)
        free, _ = dantzig_solve(X, c, np.array([0.0, 1.0]), None, bound=5.0)
        penalized, _ = dantzig_solve(X, c, np.array([1.0, 1.0]), None, bound=5.0)
        # zero-weight intercept is free to absorb the mean; penalizing it
        # shrinks it toward zero
        assert abs(free[0]) > abs(penalized[0]) - 1e-9
        assert abs(free[0] - 3.0) < 0.5

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            dantzig_lp_build(np.ones((5, 2)), np.ones(4), np.ones(2), None, 1.0)

    def test_bound_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            dantzig_lp_build(np.ones((2, 1)), np.ones(2), np.ones(1), None, 0.0)
