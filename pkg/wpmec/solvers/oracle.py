"""
Reference checks for the dual pipeline.

``brute_force`` searches single-antenna instances with at most two users. With
N = 1 the covariance is a scalar and the full budget is optimal. The search
grids the offloading times (and, for two users, how the MEC capacity is split)
and zooms in around the best cell; for each cell the local bits are optimal in
closed form, since q + ell(q) is concave in q. ``kkt_check`` splits the
duality gap of an allocation and a dual point into non-negative certificate
terms.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import UnsupportedSizeError, ValidationError
from ..model import (Allocation, ChannelSet, SystemConfig, UserArrays, UserProfile, check_feasibility,
                     effective_gains, harvested_energies, offload_energies, stack_profiles)
from .dual_solver import LN2, DualPoint, DualProblem
from .observability import SolverLogger, get_metrics, monitor_performance

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

MIN_RESOLUTION = 32
MIN_SPLIT_POINTS = 9
MAX_GRID_POINTS = 100_000_000
DEFAULT_RESOLUTION = {1: 257, 2: 65}
DEFAULT_SPLIT_POINTS = 33
DEFAULT_REFINEMENTS = 12
ROOT_STEPS = 100
# Harvested energy, block length and MEC capacity are shrunk by this factor so that grid
# points stay feasible after rounding
MARGIN = 1e-12
KKT_TOL = 1e-4


@dataclass(frozen=True)
class GridSpec:
    """
    Search resolution.

    ``t_points`` defaults to 257 for one user and 65 for two; ``split_points``
    grids the first user's share of the MEC capacity. After the first pass the
    grid is re-centred on the best cell, four cells wide, ``refinements``
    times.
    """

    t_points: Optional[int] = None
    split_points: int = DEFAULT_SPLIT_POINTS
    refinements: int = DEFAULT_REFINEMENTS

    def resolve(self, K: int) -> Tuple[int, int, int]:
        t_points = self.t_points or DEFAULT_RESOLUTION.get(K, 65)
        if t_points < MIN_RESOLUTION:
            raise ValidationError(f"t_points must be at least {MIN_RESOLUTION}, got {t_points}")
        if self.split_points < MIN_SPLIT_POINTS:
            raise ValidationError(f"split_points must be at least {MIN_SPLIT_POINTS}, got {self.split_points}")
        if self.refinements < 0:
            raise ValidationError(f"refinements must be >= 0, got {self.refinements}")
        split_points = self.split_points if K == 2 else 1
        return t_points, split_points, self.refinements


def _offloadable_bits(t: np.ndarray, E_off: np.ndarray, gain: float, cfg: SystemConfig) -> np.ndarray:
    """Largest ell with (t / g) beta(ell / t) <= E_off; 0 where t = 0 or E_off <= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bits = t * cfg.B * np.log1p(gain * E_off / (t * cfg.sigma2)) / LN2
    return np.where((t > 0) & (E_off > 0), bits, 0.0)


def _best_user_split(E: float, gain: float, i: int, users: UserArrays, t: np.ndarray, cap: np.ndarray,
                     cfg: SystemConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Best (q, ell) of user ``i`` for slot ``t`` with at most ``cap`` offloaded bits.

    q + min(ell(q), cap) rises with q while ell(q) >= cap and is concave
    beyond, so the optimum is the stationary point of q + ell(q) clipped to
    [q_cap_hit, q_max]. The stationary point is the positive root of
    q^3 + (3 B t / ln2) q^2 - (t sigma2 / g + E_avail) / a, a = zeta C^3 / T^2.

    Returns:
        (q, ell, feasible), broadcast over ``t`` and ``cap``
    """
    a = users.local_coeff[i] / cfg.T ** 2
    avail = E - users.p_c[i] * t
    feasible = avail >= 0
    avail = np.maximum(avail, 0.0)
    q_max = np.minimum(users.q_cap[i], np.cbrt(avail / a))

    quad = 3.0 * cfg.B * t / LN2
    const = (t * cfg.sigma2 / gain + avail) / a
    lo, hi = np.zeros_like(q_max), np.array(q_max, dtype=float)
    for _ in range(ROOT_STEPS):
        mid = 0.5 * (lo + hi)
        above = mid ** 3 + quad * mid ** 2 - const > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        needed = np.where(t > 0, t * cfg.sigma2 * np.expm1(cap * LN2 / (t * cfg.B)) / gain,
                          np.where(cap > 0, np.inf, 0.0))
    q_cap_hit = np.minimum(np.cbrt(np.maximum(avail - needed, 0.0) / a), q_max)
    q = np.maximum(lo, q_cap_hit)
    ell = np.minimum(_offloadable_bits(t, avail - a * q ** 3, gain, cfg), cap)
    return q, ell, feasible


def _axis(lo: float, hi: float, points: int) -> np.ndarray:
    return np.linspace(lo, hi, points) if hi > lo else np.array([lo])


def _zoom(box: List[Tuple[float, float]], bounds: List[Tuple[float, float]], point: Sequence[float],
          points: Sequence[int]) -> List[Tuple[float, float]]:
    zoomed = []
    for (lo, hi), (lo_0, hi_0), x, n in zip(box, bounds, point, points):
        step = 2.0 * (hi - lo) / max(n - 1, 1)
        zoomed.append((max(lo_0, x - step), min(hi_0, x + step)))
    return zoomed


@monitor_performance("brute_force")
def brute_force(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                grid: Optional[GridSpec] = None, pin_local: bool = False) -> Tuple[Allocation, float]:
    """
    Exhaustive search for N = 1 and K <= 2.

    Ties are broken towards the smaller total offloading time.

    Args:
        pin_local: pin local bits to 0 (offloading-only reference)

    Returns:
        (best allocation, best objective)
    """
    if cfg.N != 1 or cfg.K > 2:
        raise UnsupportedSizeError(f"brute force supports N = 1 and K <= 2, got N = {cfg.N}, K = {cfg.K}")
    channels.check_against(cfg)
    t_points, split_points, refinements = (grid or GridSpec()).resolve(cfg.K)
    per_pass = t_points ** cfg.K * split_points
    if per_pass > MAX_GRID_POINTS:
        raise ValidationError(f"grid of {per_pass} points exceeds the limit of {MAX_GRID_POINTS}")

    users = stack_profiles(profiles, cfg, allow_local=not pin_local)
    gains = effective_gains(channels, cfg)
    Q = np.array([[cfg.energy_budget]], dtype=complex)
    E = harvested_energies(Q, channels, cfg) * (1.0 - MARGIN)
    T_usable = cfg.T * (1.0 - MARGIN)
    L_usable = cfg.L_max * (1.0 - MARGIN)
    omega = cfg.omega

    def evaluate(t: np.ndarray, cap: np.ndarray, i: int):
        return _best_user_split(E[i], gains[i], i, users, t, cap, cfg)

    def search(box: List[Tuple[float, float]]) -> Tuple[float, float, Tuple[float, ...]]:
        """(value, total time, point) of the best cell in ``box``."""
        if cfg.K == 1:
            t = _axis(*box[0], t_points)
            q, ell, feasible = evaluate(t, np.array(cfg.L_max), 0)
            value = np.where(feasible, omega[0] * (q + ell), -np.inf)
            best = value.max()
            k = int(np.flatnonzero(value == best)[0])
            return float(best), float(t[k]), (float(t[k]),)

        t1 = _axis(*box[0], t_points)
        t2 = _axis(*box[1], t_points)
        share = _axis(*box[2], split_points)
        q1, ell1, ok1 = evaluate(t1[:, None], share[None, :], 0)
        q2, ell2, ok2 = evaluate(t2[:, None], np.maximum(L_usable - share, 0.0)[None, :], 1)
        # shape (t1, t2, share)
        value = omega[0] * (q1 + ell1)[:, None, :] + omega[1] * (q2 + ell2)[None, :, :]
        total_t = t1[:, None, None] + t2[None, :, None]
        feasible = ok1[:, None, :] & ok2[None, :, :] & (total_t <= T_usable)
        value = np.where(feasible, value, -np.inf)
        best = value.max()
        candidates = np.where(value == best, np.broadcast_to(total_t, value.shape), np.inf)
        a, b, c = np.unravel_index(int(np.argmin(candidates)), value.shape)
        return float(best), float(t1[a] + t2[b]), (float(t1[a]), float(t2[b]), float(share[c]))

    bounds = [(0.0, T_usable)] * cfg.K + ([(0.0, L_usable)] if cfg.K == 2 else [])
    points = [t_points] * cfg.K + ([split_points] if cfg.K == 2 else [])
    box = list(bounds)
    best_value, best_time, best_point = search(box)
    for _ in range(refinements):
        box = _zoom(box, bounds, best_point, points)
        value, total_time, point = search(box)
        if value > best_value or (value == best_value and total_time < best_time):
            best_value, best_time, best_point = value, total_time, point
    if not math.isfinite(best_value):
        raise ValidationError("no feasible grid point; the zero allocation should always be one")

    t = np.array(best_point[:cfg.K])
    caps = [cfg.L_max] if cfg.K == 1 else [best_point[2], max(L_usable - best_point[2], 0.0)]
    q = np.zeros(cfg.K)
    ell = np.zeros(cfg.K)
    for i in range(cfg.K):
        q_i, ell_i, _ = evaluate(np.array(t[i]), np.array(caps[i]), i)
        q[i], ell[i] = float(q_i), float(ell_i)

    metrics.increment_counter("brute_force_points", (refinements + 1) * per_pass)
    logger.debug(f"Brute force (K={cfg.K}): {refinements + 1} passes, best {best_value:.9g}")
    alloc = Allocation(Q=Q, t=t, ell=ell, q=q)
    return alloc, float(np.dot(omega, q + ell))


# ---------------------------------------------------------
# KKT certificate
# ---------------------------------------------------------

@dataclass
class KktCertificate:
    """
    Duality-gap decomposition of an allocation against a dual point.

    For a feasible allocation and a dual-feasible point the non-negative
    ``terms`` add up to the gap between the dual value and the objective,
    all divided by ``scale``.
    """

    dual_value: float
    primal_objective: float
    scale: float
    terms: Dict[str, float]
    primal_violation: float
    tol: float
    violations: List[str] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max([self.primal_violation] + list(self.terms.values()))

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> Dict[str, object]:
        return {
            "dual_value": self.dual_value,
            "primal_objective": self.primal_objective,
            "scale": self.scale,
            "terms": dict(self.terms),
            "primal_violation": self.primal_violation,
            "max_violation": self.max_violation,
            "passed": self.passed,
            "violations": list(self.violations),
        }


def _primal_violation(alloc: Allocation, channels: ChannelSet, profiles: Sequence[UserProfile],
                      cfg: SystemConfig) -> Tuple[float, List[str]]:
    feas = check_feasibility(alloc, channels, cfg, profiles, tol=0.0)
    users = stack_profiles(profiles, cfg)
    budget = max(cfg.energy_budget, 1e-300)
    consumed = feas.harvested - feas.eh_slack
    eh_scale = np.maximum(np.maximum(feas.harvested, np.where(np.isfinite(consumed), consumed, 0.0)), 1e-300)
    measures = {
        "energy harvesting": float(np.max(np.maximum(-feas.eh_slack, 0.0) / eh_scale)),
        "time budget": max(-feas.time_slack, 0.0) / cfg.T,
        "MEC capacity": max(-feas.capacity_slack, 0.0) / max(cfg.L_max, 1.0),
        "trace budget": max(-feas.trace_slack, 0.0) / budget,
        "PSD": max(-feas.psd_min_eigenvalue, 0.0) / budget,
        "t bounds": float(np.max(np.maximum(np.maximum(-feas.t_lower_slack, -feas.t_upper_slack), 0.0))) / cfg.T,
        "ell bounds": float(np.max(np.maximum(-feas.ell_lower_slack, 0.0))) / max(cfg.L_max, 1.0),
        "q bounds": float(np.max(np.maximum(np.maximum(-feas.q_lower_slack, -feas.q_upper_slack), 0.0)
                                 / np.maximum(users.q_cap, 1.0))),
    }
    worst = max(measures.values())
    return worst, [f"{name} violated ({value:.3e})" for name, value in measures.items() if value > 0]


@monitor_performance("kkt_check")
def kkt_check(alloc: Allocation, dp: DualPoint, channels: ChannelSet, profiles: Sequence[UserProfile],
              cfg: SystemConfig, tol: float = KKT_TOL) -> KktCertificate:
    """
    Certificate terms: local and offloading stationarity losses, complementary
    slackness of every coupling constraint, G(lambda, rho) Q, and primal
    feasibility. Violations are reported, never raised.
    """
    problem = DualProblem(channels, profiles, cfg)
    feasible, w_max, _ = problem.feasibility(dp)
    dual_value, sub = problem.evaluate(dp, check=False)
    users = problem.users
    omega = cfg.omega
    T = cfg.T

    q = np.maximum(alloc.q, 0.0)
    t = np.maximum(alloc.t, 0.0)
    ell = np.maximum(alloc.ell, 0.0)
    local_opt = omega * sub.q_star - dp.lam * users.local_coeff * sub.q_star ** 3 / T ** 2
    local_cur = omega * q - dp.lam * users.local_coeff * q ** 3 / T ** 2
    off_energy_opt = problem.consumed_energy(sub) - users.local_coeff * sub.q_star ** 3 / T ** 2
    off_opt = (omega - dp.theta) * sub.ell_star - dp.lam * off_energy_opt - dp.mu * sub.t_star
    off_energy_cur = offload_energies(t, ell, problem.gains, users.p_c, cfg)
    with np.errstate(invalid="ignore"):
        off_cur = (omega - dp.theta) * ell - dp.lam * off_energy_cur - dp.mu * t

    feas = check_feasibility(alloc, channels, cfg, profiles)
    G = problem.dual_matrix(dp)
    primal = float(np.dot(omega, alloc.q + alloc.ell))
    scale = max(abs(dual_value), abs(primal), 1e-300)

    terms = {
        "local_stationarity": float(np.sum(np.maximum(local_opt - local_cur, 0.0))) / scale,
        "offload_stationarity": float(np.sum(np.maximum(off_opt - off_cur, 0.0))) / scale,
        "eh_slackness": float(np.sum(np.abs(dp.lam * feas.eh_slack))) / scale,
        "time_slackness": abs(dp.mu * feas.time_slack) / scale,
        "capacity_slackness": abs(dp.theta * feas.capacity_slack) / scale,
        "trace_slackness": abs(dp.rho * feas.trace_slack) / scale,
        "beamforming": abs(float(np.real(np.vdot(G, alloc.Q)))) / scale,
    }
    terms = {name: (value if math.isfinite(value) else math.inf) for name, value in terms.items()}
    violation, messages = _primal_violation(alloc, channels, profiles, cfg)
    if not feasible:
        messages.append(f"dual point outside the dual domain (max eigenvalue of G {w_max:.3e})")
        violation = max(violation, max(w_max, 0.0) * cfg.energy_budget / scale, tol * 10.0)

    certificate = KktCertificate(dual_value=dual_value, primal_objective=primal, scale=scale, terms=terms,
                                 primal_violation=violation, tol=tol, violations=messages)
    metrics.increment_counter("kkt_checks_passed" if certificate.passed else "kkt_checks_failed")
    return certificate
