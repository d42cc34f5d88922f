import itertools

import numpy as np
import pytest

from crossopt.qp import (
    INFEASIBLE,
    OPTIMAL,
    AdmmCache,
    QpProblem,
    QpSolution,
    solve_penalized_qp,
    solve_qp,
)


def make_qp(P, r, G=None, h=None, lb=None, ub=None, c=0.0):
    n = len(r)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    return QpProblem(n=n, P=np.asarray(P, dtype=float), r=np.asarray(r, dtype=float),
                     G=G, h=h, lb=lb, ub=ub, c=c)


def active_set_oracle(prob: QpProblem, tol=1e-9):
    """Independent optimum by enumerating candidate active sets.

    Requires strictly convex P and finite constraints expressed as G rows
    only.  Every subset of rows of size <= n is treated as equalities; the
    KKT system is solved directly and sign/feasibility checked.
    """
    n, m = prob.n, prob.m
    best_obj, best_x = np.inf, None
    for size in range(0, min(n, m) + 1):
        for S in itertools.combinations(range(m), size):
            A = prob.G[list(S)]
            K = np.zeros((n + size, n + size))
            K[:n, :n] = prob.P
            K[:n, n:] = A.T
            K[n:, :n] = A
            rhs = np.concatenate([-prob.r, prob.h[list(S)]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam < -1e-7):
                continue
            if np.any(prob.G @ x > prob.h + 1e-7):
                continue
            obj = prob.objective(x)
            if obj < best_obj - 1e-12:
                best_obj, best_x = obj, x
    return best_obj, best_x


def random_feasible_qp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, 13))
    B = rng.normal(size=(n, n))
    P = B @ B.T + 0.5 * np.eye(n)
    r = 2.0 * rng.normal(size=n)
    G = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    slack = rng.uniform(0.0, 1.0, size=m)
    slack[rng.random(m) < 0.3] = 0.0
    h = G @ x0 + slack
    return make_qp(P, r, G, h)


class TestSolveQp:
    def test_active_bound(self):
        prob = make_qp([[2.0]], [0.0], G=[[-1.0]], h=[-1.0])
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        assert abs(sol.x[0] - 1.0) < 1e-6
        assert abs(sol.objective - 1.0) < 1e-6

    def test_unconstrained_minimizer(self):
        # (x - 3)^2 + (y + 1)^2, constants dropped.
        prob = make_qp(2.0 * np.eye(2), [-6.0, 2.0], c=10.0)
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.x, [3.0, -1.0], atol=1e-6)
        assert abs(sol.objective - 0.0) < 1e-6

    def test_box_only(self):
        prob = make_qp([[2.0]], [-8.0], lb=[0.0], ub=[1.5])
        sol = solve_qp(prob)
        assert abs(sol.x[0] - 1.5) < 1e-6

    def test_equality_pair_rows(self):
        G = np.array([[1.0], [-1.0]])
        h = np.array([3.0, -3.0])
        prob = make_qp([[2.0]], [0.0], G=G, h=h)
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        assert abs(sol.x[0] - 3.0) < 1e-8

    def test_infeasible_certificate(self):
        prob = make_qp([[2.0]], [0.0], G=[[1.0], [-1.0]], h=[0.0, -1.0])
        sol = solve_qp(prob)
        assert sol.status == INFEASIBLE
        assert sol.certificate is not None

    def test_matches_active_set_oracle(self):
        checked = 0
        for seed in range(50):
            prob = random_feasible_qp(seed)
            sol = solve_qp(prob, tol=1e-6)
            assert sol.status == OPTIMAL, f"seed {seed}: {sol.status}"
            assert max(sol.kkt_residuals) <= 1e-6
            oracle_obj, _ = active_set_oracle(prob)
            assert np.isfinite(oracle_obj)
            assert abs(sol.objective - oracle_obj) <= 1e-6, f"seed {seed}"
            checked += 1
        assert checked == 50

    def test_deterministic_bitwise(self):
        prob = random_feasible_qp(7)
        a = solve_qp(prob)
        b = solve_qp(prob)
        assert a.objective == b.objective
        assert np.array_equal(a.x, b.x)
        assert a.kkt_residuals == b.kkt_residuals

    def test_cache_reuse_same_answer(self):
        prob = random_feasible_qp(11)
        cache = AdmmCache()
        a = solve_qp(prob, cache=cache)
        b = solve_qp(prob, cache=cache)
        c = solve_qp(prob)
        assert np.array_equal(a.x, b.x)
        np.testing.assert_allclose(b.x, c.x, atol=1e-9)

    def test_non_psd_rejected_at_construction(self):
        with pytest.raises(ValueError):
            make_qp([[-1.0]], [0.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            make_qp([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


class TestPenalized:
    def test_exactness_when_jointly_satisfiable(self):
        rng = np.random.default_rng(3)
        B = rng.normal(size=(3, 3))
        P = B @ B.T + np.eye(3)
        r = rng.normal(size=3)
        G = rng.normal(size=(6, 3))
        x0 = rng.normal(size=3)
        h = G @ x0 + rng.uniform(0.0, 0.5, size=6)
        prob = make_qp(P, r, G, h)
        hard = solve_qp(prob, tol=1e-8)
        pen = solve_penalized_qp(prob, local_rows=np.array([0, 2, 4]), rho=1e6, tol=1e-8)
        assert pen.status == OPTIMAL
        viol = np.maximum(0.0, prob.G @ pen.x - prob.h)
        assert viol.max(initial=0.0) <= 1e-6
        assert abs(pen.objective - hard.objective) <= 1e-6

    def test_no_rows(self):
        prob = make_qp([[2.0]], [0.0])
        sol = solve_penalized_qp(prob, local_rows=np.array([], dtype=int), rho=1e6)
        assert abs(sol.x[0]) < 1e-6

    def test_hard_vs_penalized_one_dim(self):
        # Hard x <= 0 against penalized x >= 1: sit at 0 and pay rho.
        prob = make_qp([[2.0]], [0.0], G=[[1.0], [-1.0]], h=[0.0, -1.0])
        sol = solve_penalized_qp(prob, local_rows=np.array([1]), rho=1e6)
        assert sol.status == OPTIMAL
        assert abs(sol.x[0]) <= 1e-6
        assert abs(sol.objective - 1e6) <= 1.0  # f(0) + rho * 1

    def test_hard_rows_infeasible_reported(self):
        prob = make_qp([[2.0]], [0.0], G=[[1.0], [-1.0], [1.0]], h=[0.0, -1.0, 5.0])
        sol = solve_penalized_qp(prob, local_rows=np.array([2]), rho=1e6)
        assert sol.status == INFEASIBLE

    def test_penalized_never_costs_more_than_hard(self):
        for seed in range(20):
            prob = random_feasible_qp(seed + 100)
            if prob.m < 2:
                continue
            hard = solve_qp(prob, tol=1e-8)
            rng = np.random.default_rng(seed)
            loc = rng.choice(prob.m, size=max(1, prob.m // 2), replace=False)
            pen = solve_penalized_qp(prob, local_rows=loc, rho=1e6, tol=1e-8)
            assert pen.objective <= hard.objective + 1e-6

    def test_exact_penalty_property(self):
        # Feasible instances: penalized solution has no local violation.
        for seed in range(25):
            prob = random_feasible_qp(seed + 300)
            rng = np.random.default_rng(seed + 1)
            loc = rng.choice(prob.m, size=max(1, prob.m // 2), replace=False)
            pen = solve_penalized_qp(prob, local_rows=loc, rho=1e6, tol=1e-8)
            viol = np.maximum(0.0, prob.G[loc] @ pen.x - prob.h[loc])
            assert viol.max(initial=0.0) <= 1e-6, f"seed {seed}"

    def test_deterministic(self):
        prob = random_feasible_qp(42)
        loc = np.array([0])
        a = solve_penalized_qp(prob, loc, rho=1e6)
        b = solve_penalized_qp(prob, loc, rho=1e6)
        assert np.array_equal(a.x, b.x) and a.objective == b.objective
