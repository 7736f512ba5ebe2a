"""Linear-convergence certificates for Gauss-Seidel multi-block ADMM.

Three sufficient condition sets ("scenarios") give a Q-linear contraction
``Phi^k >= (1 + delta) Phi^{k+1}`` of the merit function

    Phi^k = w * sum_{i=1}^{N-1} ||sum_{j>i} A_j (x_j* - x_j^k)||^2 + ||lam* - lam^k||^2 / (2 gamma)

with ``w = gamma/2`` (scenario 1) or ``w = gamma`` (scenarios 2 and 3):

=========  ==================  ===================  ===================
scenario   strongly convex     Lipschitz gradient   rank condition
=========  ==================  ===================  ===================
1          f_2 .. f_N          f_N                  A_N full row rank
2          f_1 .. f_N          f_1 .. f_N           --
3          f_2 .. f_N          f_1 .. f_N           A_1 full column rank
=========  ==================  ===================  ===================

Block indices in formulas are 1-based; code indexes blocks from 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import IterateState, ProblemInstance, ReferenceSolution

SCENARIOS = ("scenario1", "scenario2", "scenario3")
HALF_GAMMA = "half_gamma"
FULL_GAMMA = "full_gamma"

RTOL = 1e-8
ATOL = 1e-12


class NotCertifiable(ValueError):
    """The instance lacks a modulus required by the requested bound."""


# ---------------------------------------------------------------------------
# Rank and kappa


@dataclass
class RankDetails:
    rank: int
    rows: int
    case: str  # "full_row_rank" or "rank_deficient"
    threshold: float
    selected_rows: list = field(default_factory=list)
    ambiguous: bool = False


def _rank_threshold(M: np.ndarray, rank_tol: Optional[float]):
    s = np.linalg.svd(M, compute_uv=False)
    smax = float(s[0]) if s.size else 0.0
    if rank_tol is None:
        rank_tol = max(M.shape) * np.finfo(float).eps
    thresh = rank_tol * smax
    rank = int(np.sum(s > thresh))
    ambiguous = bool(np.any((s > thresh / 10) & (s < thresh * 10)))
    return s, smax, thresh, rank, ambiguous


def numerical_rank(M: np.ndarray, rank_tol: Optional[float] = None) -> int:
    return _rank_threshold(np.atleast_2d(M), rank_tol)[3]


def full_row_rank(A: np.ndarray, rank_tol: Optional[float] = None) -> bool:
    return A.shape[0] <= A.shape[1] and numerical_rank(A, rank_tol) == A.shape[0]


def full_column_rank(A: np.ndarray, rank_tol: Optional[float] = None) -> bool:
    return A.shape[1] <= A.shape[0] and numerical_rank(A, rank_tol) == A.shape[1]


def kappa_of_matrix(M: np.ndarray, rank_tol: Optional[float] = None):
    """Range-space constant with ``||lam||^2 <= kappa ||M^T lam||^2`` on ``range(M)``.

    A full-row-rank ``M`` gives ``1 / lambda_min(M M^T)``.  Otherwise ``r``
    rows are chosen by column-pivoted QR of ``M^T``, the remaining rows are
    written as ``B M_r`` and ``kappa = lambda_max(I + B^T B) / lambda_min(E E^T)``
    with ``E = (I + B^T B) M_r``.
    """
    M = np.asarray(M, dtype=float)
    p = M.shape[0]
    s, smax, thresh, r, ambiguous = _rank_threshold(M, rank_tol)
    if smax == 0.0 or r == 0:
        raise ValueError("stacked coupling matrix is numerically zero")
    if ambiguous:
        warnings.warn("numerical rank is ambiguous within the rank tolerance band", RuntimeWarning)
    if r == p:
        lam_min = float(np.linalg.eigvalsh(M @ M.T)[0])
        details = RankDetails(r, p, "full_row_rank", thresh, list(range(p)), ambiguous)
        return 1.0 / lam_min, details
    _, _, piv = scipy.linalg.qr(M.T, mode="economic", pivoting=True)
    sel = sorted(int(i) for i in piv[:r])
    rest = [i for i in range(p) if i not in set(sel)]
    Mr = M[sel]
    B = np.linalg.lstsq(Mr.T, M[rest].T, rcond=None)[0].T
    G = np.eye(r) + B.T @ B
    E = G @ Mr
    kappa = float(np.linalg.eigvalsh(G)[-1]) / float(np.linalg.eigvalsh(E @ E.T)[0])
    return kappa, RankDetails(r, p, "rank_deficient", thresh, sel, ambiguous)


def compute_kappa(instance: ProblemInstance, rank_tol: Optional[float] = None):
    """``(kappa, RankDetails)`` for ``M = [A_1, ..., A_N]``."""
    M = instance.stacked
    if rank_tol is None:
        rank_tol = max(instance.p, M.shape[1]) * np.finfo(float).eps
    return kappa_of_matrix(M, rank_tol)


# ---------------------------------------------------------------------------
# Scenario classification and gamma bounds


def classify_scenario(instance: ProblemInstance, rank_tol: Optional[float] = None) -> tuple:
    """All scenario tags whose conditions hold, or ``("none",)``."""
    blocks = instance.blocks
    if len(blocks) < 2:
        return ("none",)
    tail_sc = all(b.sigma > 0 for b in blocks[1:])
    all_smooth = all(math.isfinite(b.lipschitz) and not b.constrained for b in blocks)
    last = blocks[-1]
    tags = []
    if (
        tail_sc
        and math.isfinite(last.lipschitz)
        and not last.constrained
        and full_row_rank(last.coupling, rank_tol)
    ):
        tags.append("scenario1")
    if tail_sc and blocks[0].sigma > 0 and all_smooth:
        tags.append("scenario2")
    if tail_sc and all_smooth and full_column_rank(blocks[0].coupling, rank_tol):
        tags.append("scenario3")
    return tuple(tags) or ("none",)


def _ratio(num, den):
    return math.inf if den == 0 else num / den


def _gamma_bound(instance, mid_factor, last_factor):
    N = instance.num_blocks
    if N < 2:
        raise NotCertifiable("certificates need at least two blocks")
    blocks = instance.blocks
    for i in range(2, N + 1):
        if blocks[i - 1].sigma <= 0:
            raise NotCertifiable(f"block {i} is not strongly convex")
    bound = math.inf
    for i in range(2, N):
        blk = blocks[i - 1]
        bound = min(bound, _ratio(4 * blk.sigma, mid_factor(N, i) * blk.lambda_max))
    last = blocks[-1]
    return min(bound, _ratio(4 * last.sigma, last_factor(N) * last.lambda_max))


def gamma_max_scenario1(instance: ProblemInstance) -> float:
    """Supremum of admissible ``gamma`` for the scenario-1 contraction."""
    return _gamma_bound(
        instance,
        lambda N, i: (2 * N - i) * (i - 1),
        lambda N: (N + 1) * (N - 2),
    )


def gamma_max_scenario23(instance: ProblemInstance) -> float:
    """Supremum of admissible ``gamma`` for scenarios 2 and 3."""
    return _gamma_bound(
        instance,
        lambda N, i: 3 * (2 * N - i) * (i - 1),
        lambda N: 3 * N * N - 3 * N - 2,
    )


# ---------------------------------------------------------------------------
# Contraction rates


def _lambda_min_outer(A):
    return float(np.linalg.eigvalsh(A @ A.T)[0])


def _lambda_min_inner(A):
    return float(np.linalg.eigvalsh(A.T @ A)[0])


def _require(cond, msg):
    if not cond:
        raise NotCertifiable(msg)


def delta_scenario1(instance: ProblemInstance, gamma: float) -> float:
    """Contraction rate for scenario 1; nonpositive when ``gamma`` is too large."""
    N = instance.num_blocks
    _require(N >= 2, "certificates need at least two blocks")
    blocks = instance.blocks
    last = blocks[-1]
    _require(math.isfinite(last.lipschitz), "last block needs a Lipschitz gradient")
    lmin = _lambda_min_outer(last.coupling)
    _require(lmin > 0, "last coupling matrix must have full row rank")
    delta = math.inf
    for i in range(2, N):
        c = gamma * (2 * N - i) * (i - 1) * blocks[i - 1].lambda_max
        delta = min(delta, _ratio(4 * blocks[i - 1].sigma - c, c))
    num = 4 * gamma * last.sigma - gamma**2 * (N + 1) * (N - 2) * last.lambda_max
    den = 2 * last.lipschitz**2 / lmin + gamma**2 * N * (N - 1) * last.lambda_max
    return min(delta, num / den)


def auxiliary_deltas(instance: ProblemInstance, gamma: float, kappa: float) -> dict:
    """The three shared rate terms of scenarios 2 and 3."""
    N = instance.num_blocks
    _require(N >= 2, "certificates need at least two blocks")
    blocks = instance.blocks
    for b in blocks:
        _require(math.isfinite(b.lipschitz), "every block needs a Lipschitz gradient")
    d3 = math.inf
    for i in range(2, N):
        blk = blocks[i - 1]
        c = (2 * N - i) * (i - 1) * blk.lambda_max
        num = 4 * blk.sigma * gamma - 3 * gamma**2 * c
        den = 2 * gamma**2 * c + 4 * kappa * blk.lipschitz**2
        d3 = min(d3, num / den)
    d4 = min((_ratio(1.0, 4 * kappa * b.lambda_max) for b in blocks[:-1]), default=math.inf)
    last = blocks[-1]
    num = 4 * last.sigma * gamma - (3 * N * N - 3 * N - 2) * gamma**2 * last.lambda_max
    den = 2 * gamma**2 * N * (N - 1) * last.lambda_max + 4 * kappa * last.lipschitz**2
    return {"delta3": d3, "delta4": d4, "delta5": num / den}


def delta_scenario2(instance: ProblemInstance, gamma: float, kappa: float):
    """``(delta2, {"delta3", "delta4", "delta5"})``."""
    aux = auxiliary_deltas(instance, gamma, kappa)
    first = instance.blocks[0]
    lead = first.sigma * gamma / (kappa * first.lipschitz**2)
    return min(lead, *aux.values()), aux


def delta_scenario3(instance: ProblemInstance, gamma: float, kappa: float) -> float:
    N = instance.num_blocks
    aux = auxiliary_deltas(instance, gamma, kappa)
    first = instance.blocks[0]
    lmin = _lambda_min_inner(first.coupling)
    _require(lmin > 0, "first coupling matrix must have full column rank")
    lead = gamma**2 / (
        4 * kappa * gamma**2 * (N - 1) * first.lambda_max + 4 * kappa * first.lipschitz**2 / lmin
    )
    return min(lead, *aux.values())


# ---------------------------------------------------------------------------
# Certificate report


@dataclass
class ScenarioCertificate:
    scenario: str
    gamma_max: float
    gamma: float
    delta: float
    auxiliary: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return math.isfinite(self.gamma) and self.gamma < self.gamma_max and self.delta > 0


@dataclass
class CertificateReport:
    scenario: str
    matches: tuple
    kappa: Optional[float] = None
    rank_details: Optional[RankDetails] = None
    certificates: dict = field(default_factory=dict)

    @property
    def headline(self) -> Optional[ScenarioCertificate]:
        return self.certificates.get(self.scenario)

    @property
    def certified(self) -> bool:
        return self.headline is not None and self.headline.certified

    @property
    def gamma_max(self):
        return self.headline.gamma_max if self.headline else None

    @property
    def gamma(self):
        return self.headline.gamma if self.headline else None

    @property
    def delta(self):
        return self.headline.delta if self.headline else None

    @property
    def auxiliary(self) -> dict:
        return self.headline.auxiliary if self.headline else {}

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "matches": list(self.matches),
            "certified": self.certified,
            "gamma_max": self.gamma_max,
            "gamma": self.gamma,
            "delta": self.delta,
            "auxiliary": self.auxiliary,
            "kappa": self.kappa,
            "rank_details": None if self.rank_details is None else asdict(self.rank_details),
            "certificates": {
                k: {**asdict(v), "certified": v.certified} for k, v in self.certificates.items()
            },
        }


def certify(
    instance: ProblemInstance,
    gamma: Optional[float] = None,
    theta: float = 0.99,
    rank_tol: Optional[float] = None,
) -> CertificateReport:
    """Certify every matching scenario; the headline is the one with largest delta.

    Without an explicit ``gamma`` each scenario uses ``theta * gamma_max``.
    """
    matches = classify_scenario(instance, rank_tol)
    report = CertificateReport("none", matches)
    try:
        report.kappa, report.rank_details = compute_kappa(instance, rank_tol)
    except ValueError:
        pass
    if matches == ("none",):
        return report
    for tag in matches:
        gmax = gamma_max_scenario1(instance) if tag == "scenario1" else gamma_max_scenario23(instance)
        g = gamma if gamma is not None else (theta * gmax if math.isfinite(gmax) else math.nan)
        if not math.isfinite(g):
            report.certificates[tag] = ScenarioCertificate(tag, gmax, g, math.nan)
            continue
        if tag == "scenario1":
            cert = ScenarioCertificate(tag, gmax, g, delta_scenario1(instance, g))
        elif tag == "scenario2":
            d, aux = delta_scenario2(instance, g, report.kappa)
            cert = ScenarioCertificate(tag, gmax, g, d, aux)
        else:
            aux = auxiliary_deltas(instance, g, report.kappa)
            cert = ScenarioCertificate(tag, gmax, g, delta_scenario3(instance, g, report.kappa), aux)
        report.certificates[tag] = cert
    ranked = sorted(
        report.certificates.values(),
        key=lambda c: (c.certified, c.delta if math.isfinite(c.delta) else -math.inf),
    )
    report.scenario = ranked[-1].scenario
    return report


def weight_for(scenario: str) -> str:
    return HALF_GAMMA if scenario == "scenario1" else FULL_GAMMA


# ---------------------------------------------------------------------------
# Lyapunov function and inequality checks


class LyapunovValue(NamedTuple):
    value: float
    weight: str


class InequalityCheck(NamedTuple):
    holds: bool
    slack: float
    lhs: float
    rhs: float
    scale: float


def _tolerance(scale, rtol, atol):
    return max(rtol * scale, atol)


def suffix_errors(instance: ProblemInstance, primal: Sequence[np.ndarray], primal_star) -> list:
    """``sum_{j>i} A_j (x_j - x_j*)`` for ``i = 1 .. N-1``."""
    parts = [blk.coupling @ (x - xs) for blk, x, xs in zip(instance.blocks, primal, primal_star)]
    out = []
    acc = np.zeros(instance.p)
    for d in reversed(parts[1:]):
        acc = acc + d
        out.append(acc)
    return out[::-1]


def _coupled_square_sum(instance, primal, primal_star):
    return float(sum(v @ v for v in suffix_errors(instance, primal, primal_star)))


def _dual_star(reference):
    if reference.dual_star is None:
        raise ValueError("reference has no multiplier; Lyapunov values need lam*")
    return reference.dual_star


def lyapunov(
    instance: ProblemInstance,
    state: IterateState,
    reference: ReferenceSolution,
    gamma: float,
    weight: str = HALF_GAMMA,
) -> LyapunovValue:
    if weight not in (HALF_GAMMA, FULL_GAMMA):
        raise ValueError(f"unknown weight {weight!r}")
    w = gamma / 2 if weight == HALF_GAMMA else gamma
    dl = _dual_star(reference) - state.dual
    val = w * _coupled_square_sum(instance, state.primal, reference.primal_star) + (dl @ dl) / (2 * gamma)
    return LyapunovValue(float(val), weight)


def lemma1_terms(instance, state_k, state_k1, reference, gamma) -> list:
    """Right-hand terms of the one-step descent inequality, last one the coupling residual."""
    N = instance.num_blocks
    terms = []
    for i, (blk, x, xs) in enumerate(zip(instance.blocks, state_k1.primal, reference.primal_star), start=1):
        if i < N:
            coef = blk.sigma - gamma * (2 * N - i) * (i - 1) / 4 * blk.lambda_max
        else:
            coef = blk.sigma - gamma * (N + 1) * (N - 2) / 4 * blk.lambda_max
        e = x - xs
        terms.append(coef * float(e @ e))
    first = instance.blocks[0].coupling @ state_k1.primal[0]
    r = first + instance.coupled(state_k.primal) - instance.blocks[0].coupling @ state_k.primal[0] - instance.rhs
    terms.append(gamma / 2 * float(r @ r))
    return terms


def check_lemma1(instance, state_k, state_k1, reference, gamma, rtol=RTOL, atol=ATOL) -> InequalityCheck:
    """One-step descent of the ``gamma/2``-weighted Lyapunov function."""
    phi_k = lyapunov(instance, state_k, reference, gamma, HALF_GAMMA).value
    phi_k1 = lyapunov(instance, state_k1, reference, gamma, HALF_GAMMA).value
    terms = lemma1_terms(instance, state_k, state_k1, reference, gamma)
    lhs, rhs = phi_k - phi_k1, float(sum(terms))
    scale = max([phi_k, phi_k1, *map(abs, terms)])
    slack = lhs - rhs
    return InequalityCheck(slack >= -_tolerance(scale, rtol, atol), slack, lhs, rhs, scale)


@dataclass
class QLinearCheck:
    passed: list
    factors: list
    values: list

    @property
    def all_passed(self) -> bool:
        return all(self.passed)


def check_qlinear(instance, states, reference, gamma, scenario, delta, rtol=RTOL, atol=ATOL) -> QLinearCheck:
    """``Phi^k >= (1 + delta) Phi^{k+1}`` for consecutive states, scenario weighting."""
    weight = weight_for(scenario)
    values = [lyapunov(instance, s, reference, gamma, weight).value for s in states]
    passed, factors = [], []
    for a, b in zip(values, values[1:]):
        scale = max(a, (1 + delta) * b)
        passed.append(a - (1 + delta) * b >= -_tolerance(scale, rtol, atol))
        factors.append(b / a if a > 0 else math.nan)
    return QLinearCheck(passed, factors, values)


def check_geometric_envelope(values: Sequence[float], delta: float, rtol=RTOL, atol=ATOL) -> list:
    """``Phi^k <= Phi^0 / (1 + delta)^k`` for every ``k``."""
    phi0 = values[0]
    out = []
    for k, v in enumerate(values):
        bound = phi0 / (1 + delta) ** k
        out.append(v <= bound + _tolerance(max(bound, v), rtol, atol))
    return out


def check_lemma3(instance, state_k, state_k1, reference, gamma, kappa, rtol=RTOL, atol=ATOL) -> InequalityCheck:
    """Multiplier error bounded by primal errors (scenarios 2 and 3)."""
    dl = state_k1.dual - _dual_star(reference)
    lhs = float(dl @ dl)
    terms = []
    for blk, x, xs in zip(instance.blocks, state_k1.primal, reference.primal_star):
        e = x - xs
        terms.append(2 * kappa * blk.lipschitz**2 * float(e @ e))
    sk = suffix_errors(instance, state_k.primal, reference.primal_star)
    sk1 = suffix_errors(instance, state_k1.primal, reference.primal_star)
    for blk, a, b in zip(instance.blocks[:-1], sk, sk1):
        terms.append(4 * kappa * gamma**2 * blk.lambda_max * float(a @ a + b @ b))
    rhs = float(sum(terms))
    scale = max([lhs, *terms])
    slack = rhs - lhs
    return InequalityCheck(slack >= -_tolerance(scale, rtol, atol), slack, lhs, rhs, scale)


def convex_l2_bound(instance: ProblemInstance, primal, primal_star):
    """Both sides of ``sum_i ||sum_{j>i} A_j e_j||^2 <= sum_i c_i lambda_max_i ||e_i||^2``."""
    N = instance.num_blocks
    lhs = _coupled_square_sum(instance, primal, primal_star)
    rhs = 0.0
    for i in range(2, N + 1):
        e = np.asarray(primal[i - 1]) - np.asarray(primal_star[i - 1])
        rhs += (2 * N - i) * (i - 1) / 2 * instance.blocks[i - 1].lambda_max * float(e @ e)
    return lhs, rhs


# ---------------------------------------------------------------------------
# R-linear envelopes


@dataclass
class EnvelopeFit:
    ratio: float
    constant: float
    points: int
    indeterminate: bool = False


@dataclass
class RLinearReport:
    fits: dict
    xn_bound: list

    @property
    def all_contracting(self) -> bool:
        return all(f.indeterminate or f.ratio < 1 for f in self.fits.values())

    @property
    def xn_bound_holds(self) -> bool:
        return all(self.xn_bound)


def fit_envelope(errors: Sequence[float], floor: float = 1e-14) -> EnvelopeFit:
    """Least-squares fit of ``log e_k = log C + k log rho``, ``C`` lifted to an envelope."""
    e = np.asarray(errors, dtype=float)
    cutoff = floor * max(float(np.max(e, initial=0.0)), 1.0)
    k = np.nonzero(e > cutoff)[0]
    if k.size < 2:
        return EnvelopeFit(0.0, 0.0, int(k.size), indeterminate=True)
    slope, _ = np.polyfit(k, np.log(e[k]), 1)
    rho = float(np.exp(slope))
    const = float(np.max(e[k] / rho ** k))
    return EnvelopeFit(rho, const, int(k.size))


def check_rlinear(states, reference, instance, rtol=RTOL, atol=ATOL) -> RLinearReport:
    """Geometric-decay fits for ``lam``, every ``A_i x_i`` and ``x_N``; and the ``x_N`` bound."""
    lam_star = _dual_star(reference)
    series = {"dual": [float(np.linalg.norm(s.dual - lam_star)) for s in states]}
    for i, blk in enumerate(instance.blocks):
        xs = reference.primal_star[i]
        series[f"A{i + 1}x{i + 1}"] = [float(np.linalg.norm(blk.coupling @ (s.primal[i] - xs))) for s in states]
    last = instance.blocks[-1]
    series["xN"] = [float(np.linalg.norm(s.primal[-1] - reference.primal_star[-1])) for s in states]
    fits = {name: fit_envelope(vals) for name, vals in series.items()}
    bound = []
    if last.sigma > 0:
        c = last.spectral_norm / last.sigma
        for ex, el in zip(series["xN"][1:], series["dual"][1:]):
            rhs = c * el
            bound.append(ex <= rhs + _tolerance(max(ex, rhs), rtol, atol))
    return RLinearReport(fits, bound)
