import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbadmm.core import (
    BlockSpec,
    DomainError,
    IterateState,
    L1Norm,
    NoClosedForm,
    NonnegativeIndicator,
    ProblemInstance,
    Quadratic,
    ReferenceSolution,
    kkt_check,
    primal_residual,
    soft_threshold,
    solve_block_subproblem,
    subgradient_at,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def grid_argmin(fun, lo=-5.0, hi=5.0, step=1e-6):
    # coarse pass then a fine pass around the winner
    xs = np.linspace(lo, hi, 200_001)
    best = xs[np.argmin(fun(xs))]
    fine = np.arange(best - 1e-4, best + 1e-4 + step, step)
    return float(fine[np.argmin(fun(fine))])


class TestL1Oracle:
    def test_soft_threshold_example(self):
        blk = BlockSpec(np.array([[1.0], [0.0]]), L1Norm())
        assert solve_block_subproblem(blk, 1.0, np.array([2.0, 0.0]))[0] == pytest.approx(1.0, abs=1e-15)

    def test_dead_zone(self):
        blk = BlockSpec(np.array([[1.0], [0.0]]), L1Norm())
        assert solve_block_subproblem(blk, 1.0, np.array([0.5, 0.0]))[0] == 0.0

    def test_example_matches_grid(self):
        x = grid_argmin(lambda v: np.abs(v) + 0.5 * (v - 2) ** 2)
        assert x == pytest.approx(1.0, abs=1e-6)

    def test_random_cases_match_grid(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rng.normal(size=2)
            t = rng.normal(size=2) * 2
            rho = rng.uniform(0.2, 3.0)
            blk = BlockSpec(a[:, None], L1Norm())
            got = solve_block_subproblem(blk, rho, t)[0]

            def obj(v):
                r = np.outer(v, a) - t
                return np.abs(v) + rho / 2 * np.sum(r * r, axis=1)

            hi = max(5.0, 2 * abs(got) + 1)
            assert got == pytest.approx(grid_argmin(obj, -hi, hi), abs=1e-6)

    def test_closed_form_is_soft_threshold(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            a = rng.normal(size=3)
            t = rng.normal(size=3)
            rho = rng.uniform(0.1, 5)
            na = a @ a
            expect = soft_threshold(a @ t / na, 1 / (rho * na))
            blk = BlockSpec(a[:, None], L1Norm())
            assert solve_block_subproblem(blk, rho, t)[0] == pytest.approx(float(expect), rel=1e-13, abs=1e-15)

    def test_nondiagonal_hessian_rejected(self):
        blk = BlockSpec(np.array([[1.0, 1.0], [0.0, 1.0]]), L1Norm())
        with pytest.raises(NoClosedForm):
            solve_block_subproblem(blk, 1.0, np.ones(2))

    def test_subgradient(self):
        blk = BlockSpec(np.eye(1), L1Norm())
        assert subgradient_at(blk, np.array([2.0]), np.array([-7.0]))[0] == 1.0
        assert subgradient_at(blk, np.array([0.0]), np.array([0.3]))[0] == 0.3
        assert subgradient_at(blk, np.array([0.0]), np.array([4.0]))[0] == 1.0


class TestNonnegative:
    def test_clamp_projection_identity(self):
        rng = np.random.default_rng(1)
        blk = BlockSpec(np.eye(5), NonnegativeIndicator(), constrained=True)
        for _ in range(20):
            t = rng.normal(size=5)
            assert np.array_equal(solve_block_subproblem(blk, 1.0, t), np.maximum(t, 0.0))
            # other penalties round once through rho * t / rho
            rho = rng.uniform(0.1, 4)
            np.testing.assert_allclose(solve_block_subproblem(blk, rho, t), np.maximum(t, 0.0), rtol=4.5e-16, atol=0)

    def test_subgradient_domain(self):
        blk = BlockSpec(np.eye(2), NonnegativeIndicator(), constrained=True)
        with pytest.raises(DomainError):
            subgradient_at(blk, np.array([-1.0, 0.0]), np.zeros(2))
        g = subgradient_at(blk, np.array([1.0, 0.0]), np.array([-3.0, 2.0]))
        assert np.array_equal(g, [0.0, 0.0])
        g = subgradient_at(blk, np.array([0.0, 0.0]), np.array([-3.0, 2.0]))
        assert np.array_equal(g, [-3.0, 0.0])


class TestQuadratic:
    def test_normal_equations(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, p = 4, 6
            P = rng.uniform(0.1, 2, n)
            c = rng.normal(size=n)
            A = rng.normal(size=(p, n))
            t = rng.normal(size=p)
            rho = rng.uniform(0.1, 3)
            blk = BlockSpec(A, Quadratic(P, c))
            x = solve_block_subproblem(blk, rho, t)
            res = (2 * np.diag(P) + rho * A.T @ A) @ x - (rho * A.T @ t - c)
            assert np.linalg.norm(res) <= 1e-10

    def test_gradient(self):
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        q = Quadratic(P, [1.0, -1.0])
        x = np.array([0.3, -0.7])
        assert np.allclose(q.subgradient(x, np.zeros(2)), 2 * P @ x + [1.0, -1.0])

    def test_strong_convexity(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(0.2, 2.0, 6)
        q = Quadratic(d, rng.normal(size=6))
        for _ in range(200):
            x, y = rng.normal(size=6), rng.normal(size=6)
            lhs = (x - y) @ (q.gradient(x) - q.gradient(y))
            assert lhs >= 2 * d.min() * (x - y) @ (x - y) * (1 - 1e-12)

    def test_moduli(self):
        q = Quadratic([0.5, 2.0], [0.0, 0.0])
        assert q.moduli() == (1.0, 4.0)

    def test_first_order_condition_with_prox(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(5, 3))
        blk = BlockSpec(A, Quadratic(rng.uniform(0.5, 1, 3), rng.normal(size=3)))
        W = np.diag(rng.uniform(0, 2, 3))
        z = rng.normal(size=3)
        t = rng.normal(size=5)
        x = solve_block_subproblem(blk, 0.7, t, W, z)
        g = subgradient_at(blk, x, np.zeros(3)) + 0.7 * A.T @ (A @ x - t) + W @ (x - z)
        assert np.linalg.norm(g) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4),
       st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4))
def test_four_point_identity(w1, w2, w3, w4):
    w1, w2, w3, w4 = map(np.array, (w1, w2, w3, w4))
    sq = lambda v: float(v @ v)  # noqa: E731
    lhs = (w1 - w2) @ (w3 - w4)
    rhs = 0.5 * (sq(w1 - w4) - sq(w1 - w3)) + 0.5 * (sq(w2 - w3) - sq(w2 - w4))
    scale = max(1.0, sq(w1) + sq(w2) + sq(w3) + sq(w4))
    assert abs(lhs - rhs) <= 1e-13 * scale


def test_four_point_identity_sampled():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        w1, w2, w3, w4 = rng.normal(size=(4, 7))
        lhs = (w1 - w2) @ (w3 - w4)
        n = lambda v: v @ v  # noqa: E731
        rhs = 0.5 * (n(w1 - w4) - n(w1 - w3)) + 0.5 * (n(w2 - w3) - n(w2 - w4))
        assert abs(lhs - rhs) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(finite, st.floats(1e-3, 10))
def test_soft_threshold_optimality(v, t):
    x = float(soft_threshold(v, t))
    # 0 in t*d|x| + x - v
    if x != 0:
        assert x - v + t * math.copysign(1, x) == pytest.approx(0, abs=1e-12)
    else:
        assert abs(v) <= t


class TestInstance:
    def test_primal_residual_example(self):
        inst = ProblemInstance([BlockSpec(np.eye(2), Quadratic([1, 1], [0, 0])) for _ in range(2)], np.zeros(2))
        st_ = IterateState([np.array([1.0, 0.0]), np.array([0.0, 1.0])], np.zeros(2))
        assert primal_residual(inst, st_) == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_feasible_point_zero_residual(self, toy):
        inst, ref = toy
        assert primal_residual(inst, ref.as_state()) <= 1e-8

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ProblemInstance([BlockSpec(np.eye(2), L1Norm()), BlockSpec(np.eye(3), L1Norm())], np.zeros(2))
        with pytest.raises(ValueError):
            BlockSpec(np.eye(2), NonnegativeIndicator(), lipschitz=1.0, constrained=True)

    def test_frozen_arrays(self):
        blk = BlockSpec(np.eye(2), L1Norm())
        with pytest.raises(ValueError):
            blk.coupling[0, 0] = 5.0


class TestKKT:
    def _separable(self):
        rng = np.random.default_rng(9)
        A1, A2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
        P1, P2 = rng.uniform(0.5, 1, 2), rng.uniform(0.5, 1, 4)
        c1, c2 = rng.normal(size=2), rng.normal(size=4)
        b = rng.normal(size=3)
        inst = ProblemInstance([BlockSpec(A1, Quadratic(P1, c1), 1, 2), BlockSpec(A2, Quadratic(P2, c2), 1, 2)], b)
        # hand KKT system: 2 P x + c = A^T lam, A x = b
        n = 6
        K = np.zeros((n + 3, n + 3))
        K[:n, :n] = np.diag(2 * np.concatenate([P1, P2]))
        M = np.hstack([A1, A2])
        K[:n, n:] = -M.T
        K[n:, :n] = M
        sol = np.linalg.solve(K, np.concatenate([-c1, -c2, b]))
        return inst, ReferenceSolution([sol[:2], sol[2:6]], sol[6:])

    def test_exact_optimum(self):
        inst, ref = self._separable()
        assert kkt_check(inst, ref, 1e-8).ok

    def test_perturbed_optimum(self):
        inst, ref = self._separable()
        bad = ReferenceSolution([ref.primal_star[0] + 1.0, ref.primal_star[1]], ref.dual_star)
        assert not kkt_check(inst, bad, 1e-8).ok

    def test_feasible_non_optimal_toy(self, toy):
        inst, ref = toy
        x2 = np.zeros(inst.sizes[1])
        x3 = np.ones(inst.sizes[2]) * 5
        x1 = np.maximum(-inst.blocks[1].coupling @ x2 - inst.blocks[2].coupling @ x3, 0)
        x3 = x1 + inst.blocks[1].coupling @ x2
        cand = ReferenceSolution([x1, x2, x3], ref.dual_star)
        assert primal_residual(inst, cand.as_state()) <= 1e-12
        assert not kkt_check(inst, cand, 1e-8).ok


def test_zero_curvature_coordinates():
    l1, nn = L1Norm(), NonnegativeIndicator()
    H = np.diag([0.0, 2.0])
    assert np.array_equal(l1.minimize_quadratic(H, np.array([0.5, 4.0])), [0.0, 1.5])
    assert np.array_equal(nn.minimize_quadratic(H, np.array([-1.0, 4.0])), [0.0, 2.0])
    with pytest.raises(NoClosedForm):
        l1.minimize_quadratic(H, np.array([1.5, 0.0]))
    with pytest.raises(NoClosedForm):
        nn.minimize_quadratic(H, np.array([0.1, 0.0]))
