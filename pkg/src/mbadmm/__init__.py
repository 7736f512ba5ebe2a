"""Multi-block ADMM with linear-convergence certificates."""

from .core import (
    BlockSpec,
    IterateState,
    L1Norm,
    NonnegativeIndicator,
    ProblemInstance,
    Quadratic,
    ReferenceSolution,
    kkt_check,
    primal_residual,
    solve_block_subproblem,
    subgradient_at,
)
from .solvers import SolverConfig, TraceRecord, default_prox_weights, run
from .theory import CertificateReport, NotCertifiable, certify, classify_scenario, compute_kappa

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "CertificateReport",
    "IterateState",
    "L1Norm",
    "NonnegativeIndicator",
    "NotCertifiable",
    "ProblemInstance",
    "Quadratic",
    "ReferenceSolution",
    "SolverConfig",
    "TraceRecord",
    "certify",
    "classify_scenario",
    "compute_kappa",
    "default_prox_weights",
    "kkt_check",
    "primal_residual",
    "run",
    "solve_block_subproblem",
    "subgradient_at",
]
