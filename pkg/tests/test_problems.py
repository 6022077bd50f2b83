import numpy as np
import pytest

from stiefel_opt.linalg import make_rng, orthogonal_init
from stiefel_opt.optimizers import SgdHyper
from stiefel_opt.problems import (
    LevProblem,
    PrwProblem,
    finite_diff_grad,
    lev_generate,
    lev_optimum,
    lev_value_grad,
    procrustes_optimum,
    procrustes_value_grad,
    prw_cost_matrix,
    prw_solve,
    prw_two_gaussian,
    prw_value_grad,
    quadratic_value_grad,
    sinkhorn,
)

from conftest import random_frame


def naive_sinkhorn_oracle(c, r, col, reg, sweeps=4000):
    """Deliberately plain diagonal-scaling reference, kept independent of the
    package implementation."""
    k = np.exp(-c / reg)
    u = np.ones(len(r))
    v = np.ones(len(col))
    for _ in range(sweeps):
        u = r / (k @ v)
        v = col / (k.T @ u)
    return np.diag(u) @ k @ np.diag(v)


def entropic_objective(plan, c, reg):
    return float(np.sum(plan * c) + reg * np.sum(plan * (np.log(plan) - 1.0)))


class TestLev:
    def test_identity_matrix(self):
        p = LevProblem(A=np.eye(7), m=3)
        x = random_frame(7, 3, seed=1)
        f, g = lev_value_grad(p, x)
        assert f == pytest.approx(-3.0, abs=1e-12)
        np.testing.assert_allclose(g, -2.0 * x, atol=1e-14)

    def test_diagonal_optimum(self):
        p = LevProblem(A=np.diag([3.0, 2.0, 1.0]), m=2)
        x = np.eye(3)[:, :2]
        f, _ = lev_value_grad(p, x)
        assert f == pytest.approx(-5.0, abs=1e-14)
        assert lev_optimum(p) == pytest.approx(-5.0, abs=1e-12)

    def test_optimum_matches_eigendecomposition_oracle(self):
        p = lev_generate(50, 4, 3)
        # independent oracle: diagonalize and sum the top eigenvalues
        w = np.linalg.eigvalsh(p.A)
        assert lev_optimum(p) == pytest.approx(-w[-4:].sum(), abs=1e-12)

    def test_generator_exactly_symmetric_and_deterministic(self):
        for seed in (0, 1, 2):
            p = lev_generate(30, 3, seed)
            assert (p.A == p.A.T).all()
        a = lev_generate(30, 3, 5).A
        b = lev_generate(30, 3, 5).A
        assert (a == b).all()

    def test_gradient_matches_finite_differences(self):
        p = lev_generate(10, 3, 7)
        x = random_frame(10, 3, seed=8)
        _, g = lev_value_grad(p, x)
        fd = finite_diff_grad(lambda xx: lev_value_grad(p, xx)[0], x, h=1e-5)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) <= 1e-6


class TestSinkhorn:
    def test_single_point(self):
        res = sinkhorn(np.array([[2.0]]), [1.0], [1.0], reg=0.3)
        np.testing.assert_allclose(res.plan, [[1.0]], atol=1e-12)
        assert res.converged

    def test_constant_cost_gives_product_coupling(self):
        r = np.array([0.2, 0.8])
        c = np.array([0.5, 0.3, 0.2])
        res = sinkhorn(np.full((2, 3), 4.0), r, c, reg=1.0, tol=1e-12)
        np.testing.assert_allclose(res.plan, np.outer(r, c), atol=1e-10)

    def test_matches_independent_fixed_point_oracle(self):
        rng = make_rng(9)
        c = rng.random((3, 3))
        r = np.array([0.2, 0.3, 0.5])
        col = np.array([0.4, 0.4, 0.2])
        res = sinkhorn(c, r, col, reg=0.5, tol=1e-14, max_iter=10_000)
        oracle = naive_sinkhorn_oracle(c, r, col, reg=0.5)
        np.testing.assert_allclose(res.plan, oracle, atol=1e-12)

    def test_marginals_within_tol_and_positive(self):
        rng = make_rng(11)
        c = rng.random((20, 30))
        r = rng.random(20)
        r /= r.sum()
        col = rng.random(30)
        col /= col.sum()
        res = sinkhorn(c, r, col, reg=0.2, tol=1e-8)
        assert res.converged
        assert np.abs(res.plan.sum(axis=1) - r).max() <= 1e-8
        assert np.abs(res.plan.sum(axis=0) - col).max() <= 1e-8
        assert (res.plan > 0).all()

    def test_dual_objective_monotone_across_sweeps(self):
        # each half-sweep exactly maximizes one block of the concave dual, so
        # the dual ascends monotonically (the primal entropic cost of the
        # scaled iterates is not monotone in general)
        rng = make_rng(13)
        c = rng.random((5, 5))
        r = np.full(5, 0.2)
        col = rng.random(5)
        col /= col.sum()
        reg = 0.4
        k = np.exp(-c / reg)
        u = np.ones(5)
        v = np.ones(5)

        def dual(u, v):
            f = reg * np.log(u)
            g = reg * np.log(v)
            return float(
                r @ f + col @ g - reg * np.sum(np.exp((f[:, None] + g[None, :] - c) / reg))
            )

        prev = None
        for _ in range(60):
            u = r / (k @ v)
            v = col / (k.T @ u)
            val = dual(u, v)
            if prev is not None:
                assert val >= prev - 1e-10
            prev = val

    def test_entropic_objective_settles_to_oracle_value(self):
        # the primal entropic objective of the converged plan matches the
        # independent fixed-point oracle's objective
        rng = make_rng(14)
        c = rng.random((4, 4))
        w = np.full(4, 0.25)
        res = sinkhorn(c, w, w, reg=0.3, tol=1e-13, max_iter=20_000)
        oracle = naive_sinkhorn_oracle(c, w, w, reg=0.3)
        assert entropic_objective(res.plan, c, 0.3) == pytest.approx(
            entropic_objective(oracle, c, 0.3), abs=1e-10
        )

    def test_log_domain_path_small_reg(self):
        rng = make_rng(15)
        c = rng.random((8, 8)) + 0.5
        w = np.full(8, 1.0 / 8)
        res = sinkhorn(c, w, w, reg=0.02, tol=1e-9, max_iter=20_000)
        assert res.converged
        assert res.residual <= 1e-9
        assert (res.plan > 0).all()

    def test_underflowing_kernel_switches_to_log_path(self):
        # at this reg the dense kernel exp(-C/reg) underflows to exact zeros;
        # the log-domain recursion must still produce a finite positive plan
        rng = make_rng(16)
        c = rng.random((6, 6)) + 1.0
        w = np.full(6, 1.0 / 6)
        res = sinkhorn(c, w, w, reg=1e-3, tol=1e-10, max_iter=200)
        assert np.isfinite(res.plan).all()
        assert (res.plan >= 0).all()
        assert res.residual < 1.0

    def test_max_iter_returns_best_plan(self):
        rng = make_rng(17)
        c = rng.random((6, 6))
        w = np.full(6, 1.0 / 6)
        res = sinkhorn(c, w, w, reg=0.05, tol=1e-16, max_iter=3)
        assert not res.converged
        assert res.iters == 3
        assert np.isfinite(res.plan).all()

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            sinkhorn(np.ones((2, 2)), [0.7, 0.7], [0.5, 0.5], reg=0.1)


class TestPrw:
    def small_problem(self, seed=3, n=40, d=6, k=2):
        return prw_two_gaussian(n, d, seed, k=k, reg=0.5)

    def test_full_dimensional_projection_recovers_whole_cost(self):
        p = self.small_problem(d=4, k=4)
        u = np.eye(4)
        res = sinkhorn(prw_cost_matrix(p, u), p.r, p.c, p.reg)
        value, _ = prw_value_grad(p, u, res.plan)
        direct = float(np.sum(res.plan * prw_cost_matrix(p, np.eye(4))))
        assert value == pytest.approx(direct, rel=1e-10)

    def test_identical_clouds_have_zero_value(self):
        rng = make_rng(5)
        pts = rng.standard_normal((15, 5))
        w = np.full(15, 1.0 / 15)
        p = PrwProblem(xs=pts, ys=pts.copy(), r=w, c=w.copy(), k=2, reg=0.5)
        u = orthogonal_init(5, 2, rng)
        plan = np.diag(w)  # identity coupling
        value, grad = prw_value_grad(p, u, plan)
        assert value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        p = self.small_problem(seed=7, n=12, d=5, k=2)
        u = orthogonal_init(5, 2, make_rng(8))
        res = sinkhorn(prw_cost_matrix(p, u), p.r, p.c, p.reg)
        _, g = prw_value_grad(p, u, res.plan)
        fd = finite_diff_grad(lambda uu: prw_value_grad(p, uu, res.plan)[0], u, h=1e-5)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) <= 1e-6

    def test_planar_data_is_stationary(self):
        # points supported on the first two coordinates, frame = that plane
        rng = make_rng(9)
        d = 6
        xs = np.zeros((20, d))
        ys = np.zeros((20, d))
        xs[:, :2] = rng.standard_normal((20, 2)) + [2.0, 0.0]
        ys[:, :2] = rng.standard_normal((20, 2)) - [2.0, 0.0]
        w = np.full(20, 0.05)
        p = PrwProblem(xs=xs, ys=ys, r=w, c=w.copy(), k=2, reg=0.5)
        u0 = np.eye(d)[:, :2]
        u, value, trace = prw_solve(p, SgdHyper(eta=1e-3, mu=0.5), n_outer=3, u0=u0)
        np.testing.assert_allclose(np.abs(u.T @ u0), np.eye(2), atol=1e-9)

    def test_two_gaussian_recovers_plane(self):
        p = prw_two_gaussian(100, 10, 11, k=2, reg=0.5)
        u, value, trace = prw_solve(p, SgdHyper(eta=2e-2, mu=0.5), n_outer=150, rng_or_seed=12)
        # largest principal angle against span(e1, e2)
        plane = np.eye(10)[:, :2]
        sigma = np.linalg.svd(plane.T @ u, compute_uv=False)
        max_angle = np.arccos(np.clip(sigma.min(), -1, 1))
        assert max_angle <= 0.1

    def test_marginals_bounded_every_outer_iteration(self):
        p = self.small_problem(seed=13)
        _, _, trace = prw_solve(p, SgdHyper(eta=1e-3, mu=0.5), n_outer=10, sinkhorn_tol=1e-6)
        assert all(t.marginal_residual <= 1e-6 for t in trace)

    def test_traced_value_not_stale(self):
        p = self.small_problem(seed=15)
        u, value, trace = prw_solve(p, SgdHyper(eta=1e-3, mu=0.5), n_outer=5)
        assert trace[-1].value == pytest.approx(value, rel=1e-12)


class TestToysAndFiniteDiff:
    def test_linear_objective_exact(self):
        d = make_rng(1).standard_normal((4, 3))
        x = random_frame(4, 3, seed=2)
        fd = finite_diff_grad(lambda xx: float(np.tensordot(d, xx)), x)
        np.testing.assert_allclose(fd, d, atol=1e-9)

    def test_quadratic_objective_known_hessian(self):
        rng = make_rng(3)
        a = rng.standard_normal((5, 5))
        a = 0.5 * (a + a.T)
        b = rng.standard_normal((5, 2))
        x = rng.standard_normal((5, 2))
        f, g = quadratic_value_grad(a, b, x)
        fd = finite_diff_grad(lambda xx: quadratic_value_grad(a, b, xx)[0], x)
        np.testing.assert_allclose(g, fd, atol=1e-8)

    def test_procrustes_gradient_and_optimum(self):
        rng = make_rng(5)
        d = rng.standard_normal((4, 4))
        if np.linalg.det(d) < 0:
            d = -d
        x = random_frame(4, 4, seed=6)
        f, g = procrustes_value_grad(d, x)
        np.testing.assert_allclose(g, -d, atol=1e-15)
        opt = procrustes_optimum(d)
        assert np.linalg.norm(opt.T @ opt - np.eye(4)) <= 1e-12
        assert np.linalg.det(opt) > 0
        # optimum dominates random rotations
        f_opt, _ = procrustes_value_grad(d, opt)
        for seed in range(5):
            r = random_frame(4, 4, seed=seed + 10)
            if np.linalg.det(r) < 0:
                r[:, [0, 1]] = r[:, [1, 0]]
            assert f_opt <= procrustes_value_grad(d, r)[0] + 1e-12

    def test_finite_diff_rejects_bad_h(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.zeros((2, 2)), h=0.0)

    def test_lev_gap_nonnegative_along_run(self):
        from stiefel_opt.optimizers import run, sgd_state

        p = lev_generate(25, 3, 21)
        st = sgd_state(random_frame(25, 3, 22))
        _, trace = run(
            "sgd",
            st,
            lambda x: lev_value_grad(p, x)[1],
            SgdHyper(eta=0.1, mu=0.9),
            500,
            25,
            lambda x: lev_value_grad(p, x)[0],
        )
        opt = lev_optimum(p)
        assert all(r.objective - opt >= -1e-9 for r in trace)
