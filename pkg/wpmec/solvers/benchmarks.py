"""
Benchmark schemes compared against the joint design.

- local-only: no offloading; the covariance is tuned by projected supergradient ascent
- offload-only: the joint pipeline with every local cap forced to zero
- isotropic: Q = p I with the fixed-covariance solver
"""

import math
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ValidationError
from ..hermitian import hermitian, psd_project, rank_one
from ..model import (Allocation, ChannelSet, SolveReport, SystemConfig, UserArrays, UserProfile, build_report,
                     harvested_energies, stack_profiles)
from .fixed_q import solve_fixed_q
from .joint import SolverOptions, solve_joint
from .observability import SolverLogger, get_metrics, monitor_performance

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

ASCENT_ITERATIONS = 500
GOLDEN_RTOL = 1e-4
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class SchemeId(str, Enum):
    """Resource-allocation schemes."""

    JOINT = "joint"
    LOCAL_ONLY = "local-only"
    OFFLOAD_ONLY = "offload-only"
    ISOTROPIC = "isotropic"

    @classmethod
    def parse(cls, value: Union[str, "SchemeId"]) -> "SchemeId":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValidationError(f"unknown scheme {value!r}; expected one of {names}") from None


# ---------------------------------------------------------
# Local computing only
# ---------------------------------------------------------

def _local_bits(E: np.ndarray, users: UserArrays, T: float) -> np.ndarray:
    return np.minimum(users.q_cap, np.cbrt(np.maximum(E, 0.0) * T ** 2 / users.local_coeff))


def local_only_value(Q: np.ndarray, channels: ChannelSet, users: UserArrays, cfg: SystemConfig) -> float:
    """Weighted local bits sum omega_i min(cap_i, (E_i T^2 / (zeta_i C_i^3))^(1/3))."""
    E = harvested_energies(Q, channels, cfg)
    return float(np.dot(cfg.omega, _local_bits(E, users, cfg.T)))


def _local_only_supergradient(Q: np.ndarray, channels: ChannelSet, users: UserArrays,
                              cfg: SystemConfig) -> np.ndarray:
    E = harvested_energies(Q, channels, cfg)
    below_cap = (E > 0) & (_local_bits(E, users, cfg.T) < users.q_cap)
    with np.errstate(divide="ignore"):
        slope = np.where(below_cap,
                         np.cbrt(cfg.T ** 2 / users.local_coeff) / (3.0 * np.cbrt(E) ** 2), 0.0)
    return np.einsum("k,kab->ab", cfg.omega * slope * cfg.T * cfg.eta, channels.H)


def _ascend(Q: np.ndarray, channels: ChannelSet, users: UserArrays, cfg: SystemConfig,
            iterations: int) -> Tuple[np.ndarray, float]:
    budget = cfg.energy_budget
    best_Q, best_value = Q, local_only_value(Q, channels, users, cfg)
    for k in range(1, iterations + 1):
        G = _local_only_supergradient(Q, channels, users, cfg)
        norm = float(np.linalg.norm(G))
        if norm == 0.0:
            break
        Q = psd_project(Q + (budget / k) * G / norm)
        trace = float(np.real(np.trace(Q)))
        if trace <= 0:
            break
        Q = Q * (budget / trace)
        value = local_only_value(Q, channels, users, cfg)
        if value > best_value:
            best_Q, best_value = Q, value
    return best_Q, best_value


@monitor_performance("local_only_solve")
def solve_local_only(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                     iterations: int = ASCENT_ITERATIONS) -> Tuple[Allocation, SolveReport]:
    """
    Local computing only: ell = t = 0 and the covariance maximises the weighted local bits.

    Ascent restarts from the full budget aligned with each downlink channel
    and from the isotropic covariance; the best iterate is kept.
    """
    channels.check_against(cfg)
    users = stack_profiles(profiles, cfg)
    budget = cfg.energy_budget
    if budget <= 0:
        alloc = Allocation.zeros(cfg)
        return alloc, build_report(alloc, channels, profiles, cfg, dual_bound=None, iterations=0,
                                   status="converged", scheme=SchemeId.LOCAL_ONLY.value,
                                   notes=["no transmit power"])

    starts: List[np.ndarray] = [np.eye(cfg.N, dtype=complex) * (budget / cfg.N)]
    for h, norm2 in zip(channels.h, channels.h_norm2):
        if norm2 > 0:
            starts.append(rank_one(h) * (budget / norm2))

    best_Q, best_value = starts[0], -math.inf
    for start in starts:
        Q, value = _ascend(start, channels, users, cfg, iterations)
        if value > best_value:
            best_Q, best_value = Q, value

    Q = hermitian(best_Q)
    E = harvested_energies(Q, channels, cfg)
    q = np.minimum(users.q_cap, np.cbrt(E * (1.0 - 1e-12) * cfg.T ** 2 / users.local_coeff))
    alloc = Allocation(Q=Q, t=np.zeros(cfg.K), ell=np.zeros(cfg.K), q=q)
    metrics.increment_counter("local_only_starts", len(starts))
    report = build_report(alloc, channels, profiles, cfg, dual_bound=None, iterations=iterations * len(starts),
                          status="converged", scheme=SchemeId.LOCAL_ONLY.value)
    return alloc, report


# ---------------------------------------------------------
# Offloading only
# ---------------------------------------------------------

def solve_offload_only(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                       options: Optional[SolverOptions] = None) -> Tuple[Allocation, SolveReport]:
    """Joint design with every local-computing cap forced to zero."""
    return solve_joint(channels, profiles, cfg, options=options, allow_local=False,
                       scheme=SchemeId.OFFLOAD_ONLY.value)


# ---------------------------------------------------------
# Isotropic energy transmission
# ---------------------------------------------------------

def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       rtol: float = GOLDEN_RTOL) -> Tuple[float, float]:
    """Maximise a unimodal function on [lo, hi]; the endpoints are candidates too."""
    candidates = [(f(lo), lo), (f(hi), hi)]
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * max(abs(hi), 1e-300):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    candidates += [(fc, c), (fd, d)]
    value, x = max(candidates)
    return x, value


@monitor_performance("isotropic_solve")
def solve_isotropic(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                    options: Optional[SolverOptions] = None,
                    search: Optional[bool] = None) -> Tuple[Allocation, SolveReport]:
    """
    Isotropic transmission Q = p I with p in [0, T P_max / N].

    The value is non-decreasing in p (a larger covariance only relaxes the EH
    constraints), so the top of the range is optimal. ``search`` (default
    ``options.isotropic_search``) runs a golden-section search over p instead.
    """
    options = options or SolverOptions()
    if search is None:
        search = options.isotropic_search
    p_top = cfg.energy_budget / cfg.N
    label = SchemeId.ISOTROPIC.value

    def solve_at(p: float) -> Tuple[Allocation, SolveReport]:
        return solve_fixed_q(np.eye(cfg.N) * p, channels, profiles, cfg, tol=options.fixed_q_tol, scheme=label)

    if not search or p_top <= 0:
        alloc, report = solve_at(p_top)
    else:
        p_best, _ = golden_section_max(lambda p: solve_at(p)[1].primal_objective, 0.0, p_top)
        alloc, report = solve_at(p_best)
        report.notes.append(f"golden-section search over p in [0, {p_top:.6g}]")
    report.notes.append(f"per-antenna energy p = {float(np.real(alloc.Q[0, 0])):.6g} J (trace budget T P_max)")
    return alloc, report


# ---------------------------------------------------------
# Dispatch
# ---------------------------------------------------------

def solve_scheme(scheme: Union[str, SchemeId], channels: ChannelSet, profiles: Sequence[UserProfile],
                 cfg: SystemConfig, options: Optional[SolverOptions] = None) -> Tuple[Allocation, SolveReport]:
    """Solve one instance with the given scheme."""
    scheme = SchemeId.parse(scheme)
    if scheme is SchemeId.JOINT:
        return solve_joint(channels, profiles, cfg, options=options)
    if scheme is SchemeId.LOCAL_ONLY:
        return solve_local_only(channels, profiles, cfg)
    if scheme is SchemeId.OFFLOAD_ONLY:
        return solve_offload_only(channels, profiles, cfg, options=options)
    if scheme is SchemeId.ISOTROPIC:
        return solve_isotropic(channels, profiles, cfg, options=options)
    raise ValidationError(f"no solver registered for scheme {scheme}")


__all__ = [
    "SchemeId", "solve_fixed_q", "solve_local_only", "solve_offload_only", "solve_isotropic",
    "solve_scheme", "golden_section_max", "local_only_value",
]
