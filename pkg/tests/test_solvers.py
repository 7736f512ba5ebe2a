import numpy as np
import pytest

from mbadmm import problems, solvers
from mbadmm.core import BlockSpec, IterateState, ProblemInstance, Quadratic, kkt_check, subgradient_at
from mbadmm.solvers import SolverConfig, run


def _prox_config(instance, gamma, tau=0.5, alpha=1.0, iters=50):
    return SolverConfig(
        "prox_jacobian", gamma, alpha, solvers.default_prox_weights(instance, tau), max_iterations=iters
    )


def _configs(instance, gamma):
    return [
        SolverConfig("gauss_seidel", gamma),
        SolverConfig("jacobian", gamma),
        _prox_config(instance, gamma),
    ]


class TestConfig:
    def test_alpha_only_for_prox(self):
        with pytest.raises(ValueError):
            SolverConfig("gauss_seidel", 1.0, alpha=0.5)

    def test_prox_weights_required(self):
        with pytest.raises(ValueError):
            SolverConfig("prox_jacobian", 1.0)
        with pytest.raises(ValueError):
            SolverConfig("jacobian", 1.0, prox_weights=(np.eye(1),))

    @pytest.mark.parametrize("gamma", [0.0, -1.0, float("inf")])
    def test_gamma_positive(self, gamma):
        with pytest.raises(ValueError):
            SolverConfig("gauss_seidel", gamma)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            SolverConfig("newton", 1.0)


class TestFixedPoint:
    @pytest.mark.parametrize("fixture", ["toy", "quad", "small_bp"])
    def test_kkt_point_is_fixed(self, fixture, request):
        inst, ref = request.getfixturevalue(fixture)
        start = ref.as_state()
        for cfg in _configs(inst, 0.05):
            new = solvers.STEPS[cfg.variant](inst, start, cfg)
            assert np.linalg.norm(new.stacked() - start.stacked()) <= 1e-10 * max(1, np.linalg.norm(start.stacked()))
            assert np.linalg.norm(new.dual - start.dual) <= 1e-10 * max(1, np.linalg.norm(start.dual))

    def test_slack_fixed_point(self):
        inst = problems.generate_toy_qp_inequality(problems.ToyQpSpec(n1=5, n2=7, n3=5, seed=2))
        ref = problems.reference_interior_inequality(inst)
        slack = inst.rhs - inst.coupled(ref.primal_star)
        assert np.all(slack > 0)
        start = IterateState([x.copy() for x in ref.primal_star], ref.dual_star.copy(), slack=slack)
        new = solvers.step_slack_inequality(inst, start, SolverConfig("slack_inequality", 0.3))
        assert np.allclose(new.stacked(), start.stacked(), atol=1e-10)
        assert np.allclose(new.slack, slack, atol=1e-10)
        assert np.allclose(new.dual, 0, atol=1e-10)


class TestEquivalences:
    def test_prox_zero_weight_is_jacobian(self, toy):
        inst, _ = toy
        zero = tuple(np.zeros((n, n)) for n in inst.sizes)
        pj = SolverConfig("prox_jacobian", 0.01, prox_weights=zero, max_iterations=30)
        hist_pj, hist_j = [], []
        run(inst, IterateState.zeros(inst), pj, history=hist_pj)
        run(inst, IterateState.zeros(inst), SolverConfig("jacobian", 0.01, max_iterations=30), history=hist_j)
        for a, b in zip(hist_pj, hist_j):
            assert np.array_equal(a.stacked(), b.stacked())
            assert np.array_equal(a.dual, b.dual)

    def test_single_block_gs_equals_jacobian(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 4))
        inst = ProblemInstance([problems.quadratic_block(rng.uniform(0.5, 1, 4), rng.normal(size=4), A)], rng.normal(size=3))
        s = IterateState([rng.normal(size=4)], rng.normal(size=3))
        a = solvers.step_gauss_seidel(inst, s, SolverConfig("gauss_seidel", 0.7))
        b = solvers.step_jacobian(inst, s, SolverConfig("jacobian", 0.7))
        assert np.allclose(a.stacked(), b.stacked(), rtol=0, atol=1e-14)
        assert np.allclose(a.dual, b.dual, rtol=0, atol=1e-14)

    def test_single_block_is_augmented_lagrangian(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(3, 4))
        P, c, b = rng.uniform(0.5, 1, 4), rng.normal(size=4), rng.normal(size=3)
        inst = ProblemInstance([problems.quadratic_block(P, c, A)], b)
        lam = rng.normal(size=3)
        gamma = 0.9
        new = solvers.step_gauss_seidel(inst, IterateState([np.zeros(4)], lam), SolverConfig("gauss_seidel", gamma))
        # argmin_x f(x) - lam'(Ax - b) + gamma/2 ||Ax - b||^2
        x = np.linalg.solve(2 * np.diag(P) + gamma * A.T @ A, A.T @ lam + gamma * A.T @ b - c)
        assert np.allclose(new.primal[0], x, atol=1e-12)
        assert np.allclose(new.dual, lam - gamma * (A @ x - b), atol=1e-12)
        trace, final = run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", gamma, max_iterations=300))
        ref = problems.reference_quadratic(inst)
        assert kkt_check(inst, problems.ReferenceSolution(final.primal, final.dual), 1e-8).ok
        assert np.allclose(final.stacked(), ref.stacked(), atol=1e-8)

    def test_slack_variant_is_gauss_seidel_on_augmented(self):
        inst = problems.generate_toy_qp_inequality(problems.ToyQpSpec(n1=4, n2=6, n3=4, seed=5), margin=-0.5)
        aug = problems.with_slack_block(inst)
        cfg = SolverConfig("slack_inequality", 0.2, max_iterations=25)
        hist = []
        run(inst, IterateState.zeros(inst, slack=True), cfg, history=hist)
        hist_aug = []
        run(aug, IterateState.zeros(aug), SolverConfig("gauss_seidel", 0.2, max_iterations=25), history=hist_aug)
        for a, b in zip(hist, hist_aug):
            assert np.allclose(problems.with_slack_state(a).stacked(), b.stacked(), atol=1e-12)
            assert np.allclose(a.dual, b.dual, atol=1e-12)


class TestInvariants:
    def test_dual_update_identity(self, toy):
        inst, _ = toy
        for cfg in [SolverConfig("gauss_seidel", 0.01, max_iterations=40), _prox_config(inst, 0.01, alpha=0.6, iters=40)]:
            hist = []
            run(inst, IterateState.zeros(inst), cfg, history=hist)
            for a, b in zip(hist, hist[1:]):
                r = inst.coupled(b.primal) - inst.rhs
                diff = a.dual - b.dual - cfg.alpha * cfg.gamma * r
                assert np.linalg.norm(diff) <= 1e-13 * max(1, np.linalg.norm(a.dual))

    def test_sweep_optimality(self, toy):
        inst, _ = toy
        gamma = 0.02
        s = IterateState.zeros(inst)
        for _ in range(5):
            new = solvers.step_gauss_seidel(inst, s, SolverConfig("gauss_seidel", gamma))
            for i, blk in enumerate(inst.blocks):
                others = sum(
                    (inst.blocks[j].coupling @ (new.primal[j] if j < i else s.primal[j]) for j in range(len(inst.blocks)) if j != i),
                    np.zeros(inst.p),
                )
                r = blk.coupling @ new.primal[i] + others - inst.rhs
                hint = blk.coupling.T @ (s.dual - gamma * r)
                g = subgradient_at(blk, new.primal[i], hint)
                assert np.linalg.norm(g - hint) <= 1e-8
            s = new

    def test_range_space_preservation(self):
        rng = np.random.default_rng(2)
        # rank-2 stacked coupling in R^4
        U = rng.normal(size=(4, 2))
        blocks = [problems.quadratic_block(rng.uniform(0.5, 1, 3), rng.normal(size=3), U @ rng.normal(size=(2, 3))) for _ in range(3)]
        # a feasible right-hand side lies in range(M) as well
        inst = ProblemInstance(blocks, U @ rng.normal(size=2))
        M = inst.stacked
        Q = np.linalg.svd(M)[0][:, :2]
        hist = []
        run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", 0.05, max_iterations=50), history=hist)
        for s in hist:
            perp = s.dual - Q @ (Q.T @ s.dual)
            assert np.linalg.norm(perp) <= 1e-8

    def test_slack_closed_form_every_step(self):
        inst = problems.generate_toy_qp_inequality(problems.ToyQpSpec(seed=1))
        cfg = SolverConfig("slack_inequality", 0.01, max_iterations=30)
        hist = []
        run(inst, IterateState.zeros(inst, slack=True), cfg, history=hist)
        for a, b in zip(hist, hist[1:]):
            expect = np.maximum(-inst.coupled(a.primal) + inst.rhs + a.dual / cfg.gamma, 0.0)
            assert np.array_equal(b.slack, expect)


class TestRun:
    def test_zero_budget(self, toy):
        inst, _ = toy
        init = IterateState.zeros(inst)
        trace, final = run(inst, init, SolverConfig("gauss_seidel", 0.01, max_iterations=0))
        assert trace == [] and final is init

    def test_exact_budget(self, toy):
        inst, ref = toy
        trace, final = run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", 0.01, max_iterations=17), ref)
        assert len(trace) == 17 and final.iteration == 17
        assert [r.iteration for r in trace] == list(range(1, 18))

    def test_stop_tolerance(self, quad):
        inst, _ = quad
        trace, _ = run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", 0.5, max_iterations=5000, stop_tolerance=1e-9))
        assert len(trace) < 5000
        assert max(trace[-1].primal_residual, trace[-1].dual_change) <= 1e-9

    def test_partial_trace_survives_error(self):
        # an l1 block with two columns has no separable closed form
        from mbadmm.core import L1Norm, NoClosedForm

        inst = ProblemInstance([BlockSpec(np.array([[1.0, 1.0], [0.0, 1.0]]), L1Norm())], np.ones(2))
        trace = []
        with pytest.raises(NoClosedForm):
            run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", 1.0, max_iterations=3), trace=trace)
        assert trace == []

    def test_iterations_to_tolerance(self):
        assert solvers.iterations_to_tolerance(0.5, [0.4, 0.1], eps=1.0, budget=200) == 0
        assert solvers.iterations_to_tolerance(1.0, [0.4, 0.1, 0.01], eps=0.1, budget=200) == 2
        assert solvers.iterations_to_tolerance(1.0, [0.4, 0.3], eps=0.1, budget=200) == 200


class TestBasisPursuitBehaviour:
    def test_prox_jacobian_converges_where_jacobian_diverges(self, small_bp):
        inst, ref = small_bp
        gamma = problems.suggested_gamma(inst)
        _, fj = run(inst, IterateState.zeros(inst), SolverConfig("jacobian", gamma, max_iterations=300), ref)
        tau = 1.01 * gamma * (inst.num_blocks - 1)
        tr, _ = run(inst, IterateState.zeros(inst), _prox_config(inst, gamma, tau=tau, iters=3000), ref)
        err_j = solvers.relative_error(fj, ref)
        assert not np.isfinite(err_j) or err_j > 1e3
        assert tr[-1].relative_error < 1e-4

    def test_gauss_seidel_decays(self, small_bp):
        inst, ref = small_bp
        tr, _ = run(inst, IterateState.zeros(inst), SolverConfig("gauss_seidel", problems.suggested_gamma(inst), max_iterations=200), ref)
        assert tr[-1].relative_error < 1e-4
