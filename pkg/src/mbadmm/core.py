"""Problem model, block oracles and iterate state.

A problem is ``min sum_i f_i(x_i)  s.t.  sum_i A_i x_i = b`` where each
``f_i`` may carry an indicator of a closed convex set.  Every primal update
of every ADMM variant reduces to one call of :func:`solve_block_subproblem`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

UNBOUNDED = math.inf

# relative tolerance used to decide that rho*A^T A + W is diagonal
_DIAG_RTOL = 1e-13


class OracleError(ValueError):
    """A block oracle cannot produce its exact result."""


class NoClosedForm(OracleError):
    """The subproblem has no closed-form solution for this oracle."""


class DomainError(OracleError):
    """Point lies outside the domain of the block objective."""


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Block objective oracles


class BlockOracle:
    """Closed-form oracle for one block objective ``f_i``.

    Subclasses implement the exact minimizer of

        f(x) + 0.5 x^T H x - q^T x

    where ``H = rho A^T A + W`` and ``q = rho A^T t + W z`` are assembled by
    :func:`solve_block_subproblem`, and a subgradient selector.
    """

    kind = "abstract"

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def minimize_quadratic(self, hessian: np.ndarray, linear: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def subgradient(self, x: np.ndarray, hint: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}


def _separable_diagonal(hessian: np.ndarray) -> np.ndarray:
    if hessian.shape[0] == 1:
        return hessian[0]
    d = np.diag(hessian)
    off = hessian - np.diag(d)
    if np.any(np.abs(off) > _DIAG_RTOL * max(1.0, float(np.max(np.abs(d), initial=0.0)))):
        raise NoClosedForm("subproblem is not separable: rho*A^T A + W must be diagonal")
    return d


class L1Norm(BlockOracle):
    """``f(x) = ||x||_1``; the subproblem is a soft threshold."""

    kind = "l1"

    def value(self, x):
        return float(np.sum(np.abs(x)))

    def minimize_quadratic(self, hessian, linear):
        h = _separable_diagonal(hessian)
        if h.shape[0] == 1 and h[0] > 0:
            v = linear[0] / h[0]
            return np.array([math.copysign(max(abs(v) - 1.0 / h[0], 0.0), v)])
        x = np.zeros_like(linear)
        live = h > 0
        # with no curvature |x| - q x is bounded iff |q| <= 1, minimizer 0
        if np.any(~live & (np.abs(linear) > 1.0)):
            raise NoClosedForm("subproblem unbounded below (zero curvature)")
        v = linear[live] / h[live]
        x[live] = soft_threshold(v, 1.0 / h[live])
        return x

    def subgradient(self, x, hint):
        return np.where(x == 0, np.clip(hint, -1.0, 1.0), np.sign(x))


class NonnegativeIndicator(BlockOracle):
    """Indicator of the nonnegative orthant; the subproblem is a clamp."""

    kind = "nonneg"

    def value(self, x):
        return 0.0 if np.all(x >= 0) else math.inf

    def minimize_quadratic(self, hessian, linear):
        h = _separable_diagonal(hessian)
        x = np.zeros_like(linear)
        live = h > 0
        if np.any(~live & (linear > 0)):
            raise NoClosedForm("subproblem unbounded below (zero curvature)")
        # zero-curvature coordinates with q <= 0 pick the minimizer 0
        x[live] = np.maximum(linear[live] / h[live], 0.0)
        return x

    def subgradient(self, x, hint):
        if np.any(x < 0):
            raise DomainError("point outside the nonnegative orthant")
        # normal cone: g <= 0, with g = 0 on strictly positive coordinates
        return np.where(x > 0, 0.0, np.minimum(hint, 0.0))


class Quadratic(BlockOracle):
    """``f(x) = x^T P x + c^T x`` with symmetric positive semidefinite ``P``."""

    kind = "quadratic"

    def __init__(self, P, c):
        P = np.asarray(P, dtype=float)
        if P.ndim == 1:
            P = np.diag(P)
        if P.shape[0] != P.shape[1] or not np.allclose(P, P.T, rtol=0, atol=1e-14):
            raise ValueError("P must be square and symmetric")
        self.P = _frozen(P, 2)
        self.c = _frozen(c, 1)
        if self.c.shape[0] != self.P.shape[0]:
            raise ValueError("P and c dimensions differ")

    def value(self, x):
        return float(x @ self.P @ x + self.c @ x)

    def gradient(self, x):
        return 2.0 * (self.P @ x) + self.c

    def minimize_quadratic(self, hessian, linear):
        return np.linalg.solve(2.0 * self.P + hessian, linear - self.c)

    def subgradient(self, x, hint):
        return self.gradient(x)

    def params(self):
        return {"P": self.P.tolist(), "c": self.c.tolist()}

    def moduli(self) -> tuple[float, float]:
        """Strong-convexity modulus and gradient Lipschitz constant."""
        eig = np.linalg.eigvalsh(self.P)
        return 2.0 * max(float(eig[0]), 0.0), 2.0 * float(eig[-1])


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``, the proximal map of ``t*|.|``."""
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, eq=False)
class BlockSpec:
    """One block: coupling matrix ``A_i``, objective oracle and its moduli.

    ``lipschitz`` is ``math.inf`` (:data:`UNBOUNDED`) when the gradient is not
    Lipschitz; an indicator-carrying block is always unbounded.
    """

    coupling: np.ndarray
    oracle: BlockOracle
    sigma: float = 0.0
    lipschitz: float = UNBOUNDED
    constrained: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coupling", _frozen(self.coupling, 2))
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.lipschitz > 0:
            raise ValueError("lipschitz must be positive or unbounded")
        if self.constrained and math.isfinite(self.lipschitz):
            raise ValueError("a constrained block cannot have a Lipschitz gradient")

    @property
    def rows(self) -> int:
        return self.coupling.shape[0]

    @property
    def size(self) -> int:
        return self.coupling.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        g = self.coupling.T @ self.coupling
        g.setflags(write=False)
        return g

    @cached_property
    def lambda_max(self) -> float:
        """Largest eigenvalue of ``A_i^T A_i``."""
        return float(np.linalg.eigvalsh(self.gram)[-1]) if self.size else 0.0

    @cached_property
    def spectral_norm(self) -> float:
        return math.sqrt(max(self.lambda_max, 0.0))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Ordered blocks sharing row dimension ``p`` and the right-hand side ``b``.

    ``metadata`` carries generator parameters and, for planted problems, the
    ground truth; it is never read by the solvers.
    """

    blocks: tuple
    rhs: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "rhs", _frozen(self.rhs, 1))
        if not self.blocks:
            raise ValueError("an instance needs at least one block")
        for i, blk in enumerate(self.blocks):
            if blk.rows != self.p:
                raise ValueError(f"block {i} has {blk.rows} rows, rhs has {self.p}")

    @property
    def p(self) -> int:
        return self.rhs.shape[0]

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> list[int]:
        return [blk.size for blk in self.blocks]

    @cached_property
    def stacked(self) -> np.ndarray:
        """``M = [A_1, ..., A_N]``."""
        m = np.hstack([blk.coupling for blk in self.blocks])
        m.setflags(write=False)
        return m

    def coupled(self, primal: Sequence[np.ndarray]) -> np.ndarray:
        """``sum_i A_i x_i``; the empty sum is the zero vector."""
        total = np.zeros(self.p)
        for blk, xi in zip(self.blocks, primal):
            total += blk.coupling @ xi
        return total

    def check_primal(self, primal: Sequence[np.ndarray]) -> None:
        if len(primal) != self.num_blocks:
            raise ValueError(f"expected {self.num_blocks} primal blocks, got {len(primal)}")
        for i, (blk, xi) in enumerate(zip(self.blocks, primal)):
            if np.shape(xi) != (blk.size,):
                raise ValueError(f"block {i}: expected shape ({blk.size},), got {np.shape(xi)}")

    def objective(self, primal: Sequence[np.ndarray]) -> float:
        return sum(blk.oracle.value(np.asarray(x)) for blk, x in zip(self.blocks, primal))


@dataclass
class IterateState:
    """Primal blocks, multiplier and iteration counter.

    ``slack`` holds the extra nonnegative block ``x_0`` used by the
    inequality-constrained variant and is ``None`` otherwise.
    """

    primal: list
    dual: np.ndarray
    iteration: int = 0
    slack: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, instance: ProblemInstance, slack: bool = False) -> "IterateState":
        return cls(
            primal=[np.zeros(n) for n in instance.sizes],
            dual=np.zeros(instance.p),
            slack=np.zeros(instance.p) if slack else None,
        )

    def copy(self) -> "IterateState":
        return IterateState(
            primal=[x.copy() for x in self.primal],
            dual=self.dual.copy(),
            iteration=self.iteration,
            slack=None if self.slack is None else self.slack.copy(),
        )

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.primal) if self.primal else np.zeros(0)


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """A primal-dual comparison point.

    ``status`` is ``"kkt"`` when the pair was verified against the
    optimality conditions, ``"planted"`` when the primal part is an assumed
    optimum and ``"comparison"`` when it is only a distance reference (noisy
    planted data).  ``dual_star`` may be ``None`` when no multiplier is known.
    """

    primal_star: tuple
    dual_star: Optional[np.ndarray]
    kkt_residual: float = math.nan
    status: str = "kkt"

    def __post_init__(self):
        object.__setattr__(self, "primal_star", tuple(_frozen(x, 1) for x in self.primal_star))
        if self.dual_star is not None:
            object.__setattr__(self, "dual_star", _frozen(self.dual_star, 1))

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.primal_star)

    def as_state(self) -> IterateState:
        if self.dual_star is None:
            raise ValueError("reference has no multiplier")
        return IterateState([x.copy() for x in self.primal_star], self.dual_star.copy())


# ---------------------------------------------------------------------------
# Operations


def solve_block_subproblem(
    block: BlockSpec,
    rho: float,
    target: np.ndarray,
    prox_weight: Optional[np.ndarray] = None,
    anchor: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact ``argmin_x f(x) + rho/2 ||A x - target||^2 [+ 1/2 ||x - anchor||_W^2]``.

    Parameters
    ----------
    block : BlockSpec
        Supplies ``A`` and the oracle for ``f``.
    rho : float
        Penalty weight, positive.
    target : ndarray, shape (p,)
        Absorbs ``b``, the scaled multiplier and the other blocks.
    prox_weight, anchor : ndarray, optional
        Symmetric PSD weight ``W`` (n_i x n_i) and its centre; both or neither.

    Returns
    -------
    ndarray, shape (n_i,)
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if np.shape(target) != (block.rows,):
        raise ValueError(f"target must have shape ({block.rows},), got {np.shape(target)}")
    if (prox_weight is None) != (anchor is None):
        raise ValueError("prox_weight and anchor must be given together")
    hessian = rho * block.gram
    linear = rho * (block.coupling.T @ target)
    if prox_weight is not None:
        W = np.asarray(prox_weight, dtype=float)
        if W.shape != (block.size, block.size) or np.shape(anchor) != (block.size,):
            raise ValueError("prox_weight/anchor dimension mismatch")
        hessian = hessian + W
        linear = linear + W @ anchor
    return block.oracle.minimize_quadratic(hessian, linear)


def subgradient_at(block: BlockSpec, x: np.ndarray, hint: np.ndarray) -> np.ndarray:
    """Element of ``df(x)`` closest to ``hint`` (the gradient for smooth ``f``)."""
    x = np.asarray(x, dtype=float)
    hint = np.asarray(hint, dtype=float)
    if x.shape != (block.size,) or hint.shape != (block.size,):
        raise ValueError("x and hint must have the block dimension")
    return block.oracle.subgradient(x, hint)


def primal_residual(instance: ProblemInstance, state: IterateState) -> float:
    """``||sum_i A_i x_i (+ x_0) - b||``."""
    instance.check_primal(state.primal)
    r = instance.coupled(state.primal) - instance.rhs
    if state.slack is not None:
        r = r + state.slack
    return float(np.linalg.norm(r))


class KKTReport(NamedTuple):
    ok: bool
    primal_residual: float
    stationarity: list

    @property
    def residual(self) -> float:
        return max([self.primal_residual, *self.stationarity])


def kkt_check(instance: ProblemInstance, candidate: ReferenceSolution, tol: float) -> KKTReport:
    """Test ``A_i^T lam* in df_i(x_i*)`` for every block and ``sum A_i x_i* = b``."""
    if candidate.dual_star is None:
        raise ValueError("candidate has no multiplier")
    primal = list(candidate.primal_star)
    instance.check_primal(primal)
    res = float(np.linalg.norm(instance.coupled(primal) - instance.rhs))
    viol = []
    for blk, xi in zip(instance.blocks, primal):
        hint = blk.coupling.T @ candidate.dual_star
        try:
            g = subgradient_at(blk, xi, hint)
        except DomainError:
            viol.append(math.inf)
            continue
        viol.append(float(np.linalg.norm(g - hint)))
    ok = res <= tol and all(v <= tol for v in viol)
    return KKTReport(ok, res, viol)
