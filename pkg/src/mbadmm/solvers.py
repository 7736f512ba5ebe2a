"""Multi-block ADMM iteration schemes.

Four step operators share the augmented Lagrangian

    L(x; lam) = sum f_i(x_i) - <lam, sum A_i x_i - b> + gamma/2 ||sum A_i x_i - b||^2

and differ only in which block values enter each subproblem:

* ``gauss_seidel``   -- blocks in ascending order, each sees the latest values
* ``jacobian``       -- every block sees the previous iterate
* ``prox_jacobian``  -- Jacobian plus ``1/2 ||x_i - x_i^k||_{P_i}^2`` and a
  damped multiplier step ``alpha * gamma``
* ``slack_inequality`` -- Gauss-Seidel for ``sum A_i x_i <= b`` with a
  nonnegative slack block updated first
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import IterateState, ProblemInstance, ReferenceSolution, solve_block_subproblem

VARIANTS = ("gauss_seidel", "jacobian", "prox_jacobian", "slack_inequality")


@dataclass(frozen=True)
class SolverConfig:
    variant: str = "gauss_seidel"
    gamma: float = 1.0
    alpha: float = 1.0
    prox_weights: Optional[tuple] = None
    max_iterations: int = 100
    stop_tolerance: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not self.gamma > 0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be positive and finite")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.variant != "prox_jacobian" and self.alpha != 1.0:
            raise ValueError(f"variant {self.variant} uses the undamped multiplier step (alpha=1)")
        if (self.prox_weights is not None) != (self.variant == "prox_jacobian"):
            raise ValueError("prox_weights are required for, and only for, prox_jacobian")
        if self.prox_weights is not None:
            object.__setattr__(
                self, "prox_weights", tuple(np.asarray(w, dtype=float) for w in self.prox_weights)
            )
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.stop_tolerance < 0:
            raise ValueError("stop_tolerance must be nonnegative")


@dataclass
class TraceRecord:
    iteration: int
    primal_residual: float
    dual_change: float
    relative_error: Optional[float] = None
    lyapunov: Optional[float] = None


def default_prox_weights(instance: ProblemInstance, tau: float) -> tuple:
    """``P_i = tau * ||A_i||^2 * I`` for every block."""
    return tuple(tau * blk.lambda_max * np.eye(blk.size) for blk in instance.blocks)


def _dual_step(state, residual, config):
    return state.dual - config.alpha * config.gamma * residual


def step_gauss_seidel(instance: ProblemInstance, state: IterateState, config: SolverConfig) -> IterateState:
    if config.variant != "gauss_seidel":
        raise ValueError("config.variant must be gauss_seidel")
    gamma = config.gamma
    primal = list(state.primal)
    coupled = instance.coupled(primal)
    base = instance.rhs + state.dual / gamma
    for i, blk in enumerate(instance.blocks):
        own = blk.coupling @ primal[i]
        rest = coupled - own
        primal[i] = solve_block_subproblem(blk, gamma, base - rest)
        coupled = rest + blk.coupling @ primal[i]
    residual = instance.coupled(primal) - instance.rhs
    return IterateState(primal, _dual_step(state, residual, config), state.iteration + 1)


def _jacobian_sweep(instance, state, gamma, prox_weights=None):
    coupled = instance.coupled(state.primal)
    base = instance.rhs + state.dual / gamma - coupled
    primal = []
    # every target depends on iterate k only, so the order of this loop is immaterial
    for i, blk in enumerate(instance.blocks):
        target = base + blk.coupling @ state.primal[i]
        if prox_weights is None:
            primal.append(solve_block_subproblem(blk, gamma, target))
        else:
            primal.append(solve_block_subproblem(blk, gamma, target, prox_weights[i], state.primal[i]))
    return primal


def step_jacobian(instance: ProblemInstance, state: IterateState, config: SolverConfig) -> IterateState:
    if config.variant != "jacobian":
        raise ValueError("config.variant must be jacobian")
    primal = _jacobian_sweep(instance, state, config.gamma)
    residual = instance.coupled(primal) - instance.rhs
    return IterateState(primal, _dual_step(state, residual, config), state.iteration + 1)


def step_prox_jacobian(instance: ProblemInstance, state: IterateState, config: SolverConfig) -> IterateState:
    if config.variant != "prox_jacobian" or config.prox_weights is None:
        raise ValueError("config.variant must be prox_jacobian with prox_weights")
    if len(config.prox_weights) != instance.num_blocks:
        raise ValueError("one proximal weight per block is required")
    primal = _jacobian_sweep(instance, state, config.gamma, config.prox_weights)
    residual = instance.coupled(primal) - instance.rhs
    return IterateState(primal, _dual_step(state, residual, config), state.iteration + 1)


def slack_update(instance: ProblemInstance, state: IterateState, gamma: float) -> np.ndarray:
    """Closed-form slack block ``(-sum A_i x_i^k + b + lam^k / gamma)_+``."""
    return np.maximum(-instance.coupled(state.primal) + instance.rhs + state.dual / gamma, 0.0)


def step_slack_inequality(instance: ProblemInstance, state_with_slack: IterateState, config: SolverConfig) -> IterateState:
    """One sweep for ``sum A_i x_i <= b`` written as ``x_0 + sum A_i x_i = b, x_0 >= 0``."""
    if config.variant != "slack_inequality":
        raise ValueError("config.variant must be slack_inequality")
    state = state_with_slack
    if state.slack is None:
        raise ValueError("state must carry a slack block")
    gamma = config.gamma
    slack = slack_update(instance, state, gamma)
    primal = list(state.primal)
    coupled = slack + instance.coupled(primal)
    base = instance.rhs + state.dual / gamma
    for i, blk in enumerate(instance.blocks):
        own = blk.coupling @ primal[i]
        rest = coupled - own
        primal[i] = solve_block_subproblem(blk, gamma, base - rest)
        coupled = rest + blk.coupling @ primal[i]
    residual = slack + instance.coupled(primal) - instance.rhs
    return IterateState(primal, _dual_step(state, residual, config), state.iteration + 1, slack)


STEPS = {
    "gauss_seidel": step_gauss_seidel,
    "jacobian": step_jacobian,
    "prox_jacobian": step_prox_jacobian,
    "slack_inequality": step_slack_inequality,
}


def relative_error(state: IterateState, reference: ReferenceSolution) -> float:
    """``||x - x*|| / ||x*||`` over the stacked primal vector."""
    ref = reference.stacked()
    denom = float(np.linalg.norm(ref))
    err = float(np.linalg.norm(state.stacked() - ref))
    return err / denom if denom > 0 else err


def _residual_norm(instance, state):
    r = instance.coupled(state.primal) - instance.rhs
    if state.slack is not None:
        r = r + state.slack
    return float(np.linalg.norm(r))


def run(
    instance: ProblemInstance,
    initial: IterateState,
    config: SolverConfig,
    reference: Optional[ReferenceSolution] = None,
    history: Optional[list] = None,
    trace: Optional[list] = None,
):
    """Apply the configured step until the budget or the stopping tolerance.

    Returns ``(trace, final_state)`` with one :class:`TraceRecord` per
    iteration.  If ``history`` is a list, the initial state and every
    subsequent iterate are appended to it; if ``trace`` is a list, records are
    appended to it as they are produced (so they survive an oracle error).
    """
    instance.check_primal(initial.primal)
    if config.variant == "slack_inequality" and initial.slack is None:
        raise ValueError("slack_inequality needs an initial slack block")
    step = STEPS[config.variant]
    state = initial
    if trace is None:
        trace = []
    if history is not None:
        history.append(state)
    for _ in range(config.max_iterations):
        # divergent variants (plain Jacobian) may overflow; that is a result, not an error
        with np.errstate(over="ignore", invalid="ignore"):
            new = step(instance, state, config)
        rec = TraceRecord(
            iteration=new.iteration,
            primal_residual=_residual_norm(instance, new),
            dual_change=float(np.linalg.norm(new.dual - state.dual)),
            relative_error=None if reference is None else relative_error(new, reference),
        )
        if reference is not None and not math.isfinite(rec.relative_error):
            rec.relative_error = math.inf
        trace.append(rec)
        state = new
        if history is not None:
            history.append(state)
        if config.stop_tolerance > 0 and max(rec.primal_residual, rec.dual_change) <= config.stop_tolerance:
            break
    return trace, state


def iterations_to_tolerance(initial_error: float, errors, eps: float, budget: int) -> int:
    """Iterations needed to bring the relative error to ``eps``; ``budget`` if never."""
    if initial_error <= eps:
        return 0
    for k, e in enumerate(errors, start=1):
        if e is not None and e <= eps:
            return k
    return budget
