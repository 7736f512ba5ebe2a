"""Instance generators and reference-solution oracles.

Random streams: each generator derives one child ``SeedSequence`` per tensor
from its integer seed, in the order listed in its docstring, and draws that
tensor from a PCG64 generator on the child stream.  Changing one dimension
therefore never perturbs the draws of an unrelated tensor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.optimize

from .core import (
    BlockSpec,
    IterateState,
    L1Norm,
    NonnegativeIndicator,
    ProblemInstance,
    Quadratic,
    ReferenceSolution,
    kkt_check,
)


def _streams(seed: int, count: int):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def _positive_uniform(rng, n):
    # uniform on [0, 1) with exact zeros redrawn
    d = rng.uniform(0.0, 1.0, n)
    while np.any(d == 0.0):
        zero = d == 0.0
        d[zero] = rng.uniform(0.0, 1.0, int(zero.sum()))
    return d


def quadratic_block(P, c, coupling) -> BlockSpec:
    """Unconstrained quadratic block with moduli read off the spectrum of ``P``."""
    oracle = Quadratic(P, c)
    sigma, lip = oracle.moduli()
    return BlockSpec(coupling, oracle, sigma=sigma, lipschitz=lip if lip > 0 else math.inf)


def nonnegative_block(coupling) -> BlockSpec:
    return BlockSpec(coupling, NonnegativeIndicator(), sigma=0.0, constrained=True)


# ---------------------------------------------------------------------------
# Basis pursuit


@dataclass(frozen=True)
class BasisPursuitSpec:
    p: int = 300
    n: int = 1000
    s: int = 60
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.p, self.n, self.s) <= 0:
            raise ValueError("p, n and s must be positive")
        if self.s > self.n:
            raise ValueError("sparsity s cannot exceed n")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def generate_basis_pursuit(spec: BasisPursuitSpec):
    """``min ||x||_1 s.t. Ax = b`` with one scalar block per column of ``A``.

    Streams: A, support, nonzeros, noise.  Returns ``(instance, x_planted)``.
    """
    r_a, r_supp, r_val, r_noise = _streams(spec.seed, 4)
    A = r_a.standard_normal((spec.p, spec.n))
    x = np.zeros(spec.n)
    support = np.sort(r_supp.choice(spec.n, size=spec.s, replace=False))
    x[support] = r_val.standard_normal(spec.s)
    noise = r_noise.standard_normal(spec.p) * spec.noise_sigma
    b = A @ x + noise
    l1 = L1Norm()
    blocks = [BlockSpec(A[:, [j]], l1) for j in range(spec.n)]
    meta = {
        "generator": "basis_pursuit",
        "params": asdict(spec),
        "ground_truth": x,
        "suggested_gamma": 10.0 / float(np.sum(np.abs(b))),
    }
    return ProblemInstance(blocks, b, meta), x


def suggested_gamma(instance: ProblemInstance) -> Optional[float]:
    return instance.metadata.get("suggested_gamma")


def basis_pursuit_dual_certificate(A: np.ndarray, x: np.ndarray, tol: float = 1e-10):
    """Multiplier ``lam`` with ``A^T lam`` in the subdifferential of ``||.||_1`` at ``x``.

    Solves the feasibility LP ``A_S^T lam = sign(x_S)``, ``|A_j^T lam| <= 1``
    by dual simplex, then re-solves the active constraint system of the
    returned vertex so that the certificate holds to rounding error.
    Returns ``None`` when no certificate exists, i.e. ``x`` is not optimal.
    """
    p, n = A.shape
    supp = np.flatnonzero(x)
    off = np.setdiff1d(np.arange(n), supp)
    sgn = np.sign(x[supp])
    A_off = A[:, off].T
    res = scipy.optimize.linprog(
        np.zeros(p),
        A_ub=np.vstack([A_off, -A_off]) if off.size else None,
        b_ub=np.ones(2 * off.size) if off.size else None,
        A_eq=A[:, supp].T if supp.size else None,
        b_eq=sgn if supp.size else None,
        bounds=[(None, None)] * p,
        method="highs-ds",
    )
    if res.status != 0:
        return None
    lam = res.x
    corr = A_off @ lam
    active = np.flatnonzero(np.abs(corr) >= 1 - 1e-7)
    rows = np.vstack([A[:, supp].T, A_off[active]])
    vals = np.concatenate([sgn, np.sign(corr[active])])
    polished = np.linalg.lstsq(rows, vals, rcond=None)[0]

    def _ok(v):
        eq = np.max(np.abs(A[:, supp].T @ v - sgn), initial=0.0)
        ub = np.max(np.abs(A_off @ v), initial=0.0)
        return eq <= tol and ub <= 1 + tol

    if _ok(polished):
        return polished
    return lam if _ok(lam) else None


def reference_basis_pursuit(
    instance: ProblemInstance,
    ground_truth: np.ndarray,
    noise_sigma: float = 0.0,
    certify: bool = True,
) -> ReferenceSolution:
    """The planted vector as comparison point.

    Noise-free data: when ``certify`` finds a dual certificate the pair is a
    verified KKT point (status ``"kkt"``); otherwise optimality of the planted
    vector is only assumed (status ``"planted"``, no multiplier).  Noisy data
    give status ``"comparison"``.  ``kkt_residual`` reports the KKT violation
    for verified pairs and the feasibility residual otherwise.
    """
    x = np.asarray(ground_truth, dtype=float)
    primal = [x[[j]] for j in range(x.size)]
    feas = float(np.linalg.norm(instance.coupled(primal) - instance.rhs))
    if noise_sigma > 0:
        return ReferenceSolution(primal, None, feas, "comparison")
    if certify:
        lam = basis_pursuit_dual_certificate(instance.stacked, x)
        if lam is not None:
            ref = ReferenceSolution(primal, lam, math.nan, "kkt")
            return ReferenceSolution(primal, lam, kkt_check(instance, ref, 1.0).residual, "kkt")
    return ReferenceSolution(primal, None, feas, "planted")


# ---------------------------------------------------------------------------
# Three-block toy QP:  min x2'Px2 + a'x2 + x3'Qx3 + c'x3  s.t. x1 - A x2 - x3 = 0, x1 >= 0


@dataclass(frozen=True)
class ToyQpSpec:
    n1: int = 20
    n2: int = 50
    n3: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n1 != self.n3:
            raise ValueError("the coupling x1 - A x2 - x3 = 0 needs n1 == n3")
        if min(self.n1, self.n2) <= 0:
            raise ValueError("dimensions must be positive")


def _toy_data(spec: ToyQpSpec):
    r_A, r_a, r_c, r_P, r_Q = _streams(spec.seed, 5)
    A = r_A.standard_normal((spec.n1, spec.n2))
    a = r_a.standard_normal(spec.n2)
    c = r_c.standard_normal(spec.n3)
    P = _positive_uniform(r_P, spec.n2)
    Q = _positive_uniform(r_Q, spec.n3)
    return A, a, c, P, Q


def generate_toy_qp(spec: ToyQpSpec) -> ProblemInstance:
    """Blocks ordered (x1 >= 0, x2, x3); streams: A, a, c (linear term of x3), diag P, diag Q."""
    A, a, c, P, Q = _toy_data(spec)
    blocks = [
        nonnegative_block(np.eye(spec.n1)),
        quadratic_block(P, a, -A),
        quadratic_block(Q, c, -np.eye(spec.n3)),
    ]
    return ProblemInstance(blocks, np.zeros(spec.n1), {"generator": "toy_qp", "params": asdict(spec)})


def generate_toy_qp_inequality(spec: ToyQpSpec, margin: float = 1.0) -> ProblemInstance:
    """Toy data with ``x1`` eliminated: ``-A x2 - x3 <= b`` for the slack variant.

    ``b`` exceeds the constraint value at the unconstrained minimizer by
    ``margin`` in every row, so the optimum is strictly interior when
    ``margin > 0``.
    """
    A, a, c, P, Q = _toy_data(spec)
    blocks = [quadratic_block(P, a, -A), quadratic_block(Q, c, -np.eye(spec.n3))]
    x2 = -a / (2 * P)
    x3 = -c / (2 * Q)
    b = -(A @ x2) - x3 + margin
    meta = {"generator": "toy_qp_inequality", "params": {**asdict(spec), "margin": margin}}
    return ProblemInstance(blocks, b, meta)


def _toy_structure(instance: ProblemInstance):
    if instance.num_blocks != 3:
        raise ValueError("toy QP has three blocks")
    b1, b2, b3 = instance.blocks
    if not isinstance(b1.oracle, NonnegativeIndicator) or not np.array_equal(b1.coupling, np.eye(instance.p)):
        raise ValueError("block 1 must be the nonnegative orthant with identity coupling")
    if not (isinstance(b2.oracle, Quadratic) and isinstance(b3.oracle, Quadratic)):
        raise ValueError("blocks 2 and 3 must be quadratic")
    return b2, b3


def reference_toy_qp(
    instance: ProblemInstance, tol: float = 1e-10, max_iterations: int = 1_000_000
) -> ReferenceSolution:
    """Solve the toy QP through its concave dual.

    With ``x1 = b - A2 x2 - A3 x3 >= 0`` dualized by ``mu >= 0``, the inner
    minimizers are ``x_j = -(2 P_j)^{-1} (c_j + A_j^T mu)`` and the dual
    gradient is ``-x1(mu) = -(d + H mu)``.  Accelerated projected gradient
    ascent (step ``1/lambda_max(H)``, restart on a non-ascent step) runs until
    the natural residual ``||mu - max(0, mu - x1(mu))||`` drops below ``tol``;
    the active set it identifies is then re-solved exactly.  The returned
    multiplier of the equality ``x1 + A2 x2 + A3 x3 = b`` is ``lam = -mu``.
    """
    blocks = _toy_structure(instance)
    inv = [np.linalg.inv(2 * blk.oracle.P) for blk in blocks]
    H = sum(blk.coupling @ W @ blk.coupling.T for blk, W in zip(blocks, inv))
    d = instance.rhs + sum(blk.coupling @ (W @ blk.oracle.c) for blk, W in zip(blocks, inv))
    L = float(np.linalg.eigvalsh(H)[-1])

    def x1_of(mu):
        return d + H @ mu

    mu = np.zeros(instance.p)
    y, t = mu.copy(), 1.0
    resid = math.inf
    it = 0
    for it in range(1, max_iterations + 1):
        mu_new = np.maximum(y - x1_of(y) / L, 0.0)
        # restart momentum when the step moves against the ascent direction
        if (y - mu_new) @ (mu_new - mu) > 0:
            y, t = mu.copy(), 1.0
            continue
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = mu_new + (t - 1) / t_new * (mu_new - mu)
        mu, t = mu_new, t_new
        resid = float(np.linalg.norm(mu - np.maximum(mu - x1_of(mu), 0.0)))
        if resid <= tol:
            break
    else:
        raise RuntimeError(f"dual solver stopped after {it} iterations with residual {resid:.3e}")

    active = mu > 0
    if np.any(active):
        mu_pol = np.zeros_like(mu)
        mu_pol[active] = np.linalg.solve(H[np.ix_(active, active)], -d[active])
        x1_pol = x1_of(mu_pol)
        if np.all(mu_pol >= 0) and np.all(x1_pol[~active] >= -tol):
            mu = mu_pol
    xs = [-(W @ (blk.oracle.c + blk.coupling.T @ mu)) for blk, W in zip(blocks, inv)]
    # x1 from the constraint keeps the primal residual at rounding level
    x1_c = instance.rhs - sum(blk.coupling @ x for blk, x in zip(blocks, xs))
    x1 = np.where(mu > 0, 0.0, np.maximum(x1_c, 0.0))
    ref = ReferenceSolution([x1, *xs], -mu)
    report = kkt_check(instance, ref, tol)
    return ReferenceSolution([x1, *xs], -mu, report.residual, "kkt")


# ---------------------------------------------------------------------------
# All-quadratic synthetic instances (scenarios 2 and 3)


@dataclass(frozen=True)
class QuadraticBlocksSpec:
    p: int = 6
    sizes: tuple = (6, 4, 5)
    curvature: tuple = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if not self.sizes or min(self.sizes) <= 0 or self.p <= 0:
            raise ValueError("dimensions must be positive")
        lo, hi = self.curvature
        if not 0 < lo <= hi:
            raise ValueError("curvature range must satisfy 0 < lo <= hi")


def generate_quadratic_blocks(spec: QuadraticBlocksSpec) -> ProblemInstance:
    """Strongly convex quadratic blocks ``x_i' P_i x_i + c_i' x_i`` with Gaussian couplings.

    Streams: for each block, coupling ``A_i`` (entries N(0, 1/p)), diag
    ``P_i`` (uniform on the curvature range), ``c_i``; then ``b``.
    A first block with ``sizes[0] == p`` is square and almost surely
    nonsingular, which makes the instance match scenarios 2 and 3.
    """
    N = len(spec.sizes)
    streams = _streams(spec.seed, 3 * N + 1)
    lo, hi = spec.curvature
    blocks = []
    for i, n in enumerate(spec.sizes):
        r_A, r_P, r_c = streams[3 * i : 3 * i + 3]
        A = r_A.standard_normal((spec.p, n)) / math.sqrt(spec.p)
        P = r_P.uniform(lo, hi, n)
        c = r_c.standard_normal(n)
        blocks.append(quadratic_block(P, c, A))
    b = streams[-1].standard_normal(spec.p)
    meta = {"generator": "quadratic_blocks", "params": asdict(spec)}
    return ProblemInstance(blocks, b, meta)


def reference_quadratic(instance: ProblemInstance) -> ReferenceSolution:
    """Exact KKT point of an all-quadratic equality-constrained instance.

    Solves ``2 P_i x_i + c_i = A_i^T lam``, ``sum A_i x_i = b``.  For a
    rank-deficient stacked coupling the minimum-norm solution is taken, whose
    multiplier lies in ``range([A_1 .. A_N])``.
    """
    for blk in instance.blocks:
        if not isinstance(blk.oracle, Quadratic):
            raise ValueError("every block must be quadratic")
    sizes = instance.sizes
    n, p = sum(sizes), instance.p
    K = np.zeros((n + p, n + p))
    rhs = np.zeros(n + p)
    off = 0
    for blk, ni in zip(instance.blocks, sizes):
        sl = slice(off, off + ni)
        K[sl, sl] = 2 * blk.oracle.P
        K[sl, n:] = -blk.coupling.T
        K[n:, sl] = blk.coupling
        rhs[sl] = -blk.oracle.c
        off += ni
    rhs[n:] = instance.rhs
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    primal = np.split(sol[:n], np.cumsum(sizes)[:-1])
    ref = ReferenceSolution(primal, sol[n:])
    return ReferenceSolution(primal, sol[n:], kkt_check(instance, ref, 1.0).residual, "kkt")


def reference_interior_inequality(instance: ProblemInstance) -> ReferenceSolution:
    """Unconstrained minimizer of a quadratic inequality instance, with ``lam = 0``.

    Valid only when the minimizer satisfies ``sum A_i x_i < b`` strictly.
    """
    primal = []
    for blk in instance.blocks:
        if not isinstance(blk.oracle, Quadratic):
            raise ValueError("every block must be quadratic")
        primal.append(np.linalg.solve(2 * blk.oracle.P, -blk.oracle.c))
    gap = instance.rhs - instance.coupled(primal)
    if np.any(gap <= 0):
        raise ValueError("unconstrained minimizer is not strictly feasible")
    return ReferenceSolution(primal, np.zeros(instance.p), 0.0, "kkt")


def with_slack_block(instance: ProblemInstance) -> ProblemInstance:
    """Equality form ``x_0 + sum A_i x_i = b`` with ``x_0 >= 0`` as block 0."""
    blocks = [nonnegative_block(np.eye(instance.p)), *instance.blocks]
    return ProblemInstance(blocks, instance.rhs, dict(instance.metadata))


def with_slack_reference(instance: ProblemInstance, reference: ReferenceSolution) -> ReferenceSolution:
    """Reference for :func:`with_slack_block`, slack ``x_0* = b - sum A_i x_i*`` prepended."""
    slack = instance.rhs - instance.coupled(reference.primal_star)
    return ReferenceSolution(
        [slack, *reference.primal_star], reference.dual_star, reference.kkt_residual, reference.status
    )


def with_slack_state(state: IterateState) -> IterateState:
    """View a slack-carrying iterate as an iterate of :func:`with_slack_block`."""
    if state.slack is None:
        raise ValueError("state carries no slack block")
    return IterateState([state.slack, *state.primal], state.dual, state.iteration)


def reference_for(instance: ProblemInstance) -> ReferenceSolution:
    """Dispatch to the reference oracle matching the instance's generator."""
    gen = instance.metadata.get("generator")
    if gen == "toy_qp":
        return reference_toy_qp(instance)
    if gen == "basis_pursuit":
        params = instance.metadata.get("params", {})
        truth = instance.metadata.get("ground_truth")
        if truth is None:
            raise ValueError("basis pursuit instance carries no ground truth")
        return reference_basis_pursuit(instance, truth, params.get("noise_sigma", 0.0))
    if gen == "toy_qp_inequality":
        return reference_interior_inequality(instance)
    if all(isinstance(b.oracle, Quadratic) for b in instance.blocks):
        return reference_quadratic(instance)
    raise ValueError(f"no reference oracle for generator {gen!r}")
