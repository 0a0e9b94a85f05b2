"""
System model for wireless powered multiuser mobile-edge computing.

Holds the domain types (system parameters, user profiles, channels, primal
allocations, solve reports) and the physical formulas: harvested energy,
offloading and local-computing energy, the objective, and the feasibility
check of the weighted computation-rate maximisation problem.

Unit conventions follow the printed formulas: the energy covariance budget is
tr(Q) <= T * P_max and user i harvests T * eta * tr(Q H_i).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasiblePairError, ValidationError
from .hermitian import eig, trace_product

# Feasibility tolerances (absolute per unit, plus a relative part for energies)
ENERGY_ABS_TOL = 1e-12
ENERGY_REL_TOL = 1e-8
TIME_TOL = 1e-9
BITS_TOL = 1e-6

# Reference simulation defaults
DEFAULT_T = 0.1
DEFAULT_B = 2e6
DEFAULT_SIGMA2 = 1e-9
DEFAULT_ETA = 0.8
DEFAULT_L_MAX = 2e5
DEFAULT_C = 1e3
DEFAULT_ZETA = 1e-28
DEFAULT_F_MAX = 1e8
DEFAULT_P_C = 1e-4
DEFAULT_PATH_LOSS = 5e-6


@dataclass(frozen=True)
class SystemConfig:
    """Global physical and resource parameters of one block."""

    N: int
    K: int
    T: float
    P_max: float
    B: float
    sigma2: float
    eta: float
    L_max: float
    Gamma: float = 1.0
    weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be an integer >= 1, got {self.N}")
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"K must be an integer >= 1, got {self.K}")
        checks = [
            (self.T > 0, f"T must be > 0, got {self.T}"),
            (self.P_max >= 0, f"P_max must be >= 0, got {self.P_max}"),
            (self.B > 0, f"B must be > 0, got {self.B}"),
            (self.sigma2 > 0, f"sigma2 must be > 0, got {self.sigma2}"),
            (0 < self.eta <= 1, f"eta must lie in (0, 1], got {self.eta}"),
            (self.Gamma >= 1, f"Gamma must be >= 1, got {self.Gamma}"),
            (self.L_max >= 0, f"L_max must be >= 0, got {self.L_max}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(message)
        for name in ("T", "P_max", "B", "sigma2", "eta", "Gamma", "L_max"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

        if self.weights is None:
            weights = tuple([1.0 / self.K] * self.K)
        else:
            weights = tuple(float(w) for w in self.weights)
        if len(weights) != self.K:
            raise ValidationError(f"expected {self.K} weights, got {len(weights)}")
        if any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise ValidationError("all weights must be positive and finite")
        object.__setattr__(self, "weights", weights)

    @property
    def omega(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def energy_budget(self) -> float:
        """Trace budget T * P_max of the energy covariance."""
        return self.T * self.P_max

    @classmethod
    def reference_defaults(cls, K: int = 10, N: int = 4, P_max: float = 10.0, T: float = DEFAULT_T) -> "SystemConfig":
        """Simulation parameters of the reference setup (omega_i = 1/K)."""
        return cls(N=N, K=K, T=T, P_max=P_max, B=DEFAULT_B, sigma2=DEFAULT_SIGMA2,
                   eta=DEFAULT_ETA, L_max=DEFAULT_L_MAX)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "N": self.N, "K": self.K, "T": self.T, "P_max": self.P_max, "B": self.B,
            "sigma2": self.sigma2, "eta": self.eta, "Gamma": self.Gamma,
            "L_max": self.L_max, "weights": list(self.weights),
        }


@dataclass(frozen=True)
class UserProfile:
    """Computation parameters of one user."""

    C: float
    zeta: float
    f_max: float
    p_c: float

    def __post_init__(self):
        for name in ("C", "zeta", "f_max", "p_c"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be positive and finite, got {value}")

    @classmethod
    def reference_defaults(cls) -> "UserProfile":
        return cls(C=DEFAULT_C, zeta=DEFAULT_ZETA, f_max=DEFAULT_F_MAX, p_c=DEFAULT_P_C)

    def to_dict(self) -> Dict[str, float]:
        return {"C": self.C, "zeta": self.zeta, "f_max": self.f_max, "p_c": self.p_c}


def uniform_profiles(K: int, profile: Optional[UserProfile] = None) -> List[UserProfile]:
    """K copies of ``profile`` (reference defaults when omitted)."""
    profile = profile or UserProfile.reference_defaults()
    return [profile] * K


@dataclass(frozen=True)
class UserArrays:
    """User profiles stacked into arrays for vectorised subproblems."""

    C: np.ndarray
    zeta: np.ndarray
    f_max: np.ndarray
    p_c: np.ndarray
    q_cap: np.ndarray

    @property
    def local_coeff(self) -> np.ndarray:
        """zeta_i C_i^3, so that E_loc,i = local_coeff * q_i^3 / T^2."""
        return self.zeta * self.C ** 3


def stack_profiles(profiles: Sequence[UserProfile], cfg: SystemConfig, allow_local: bool = True) -> UserArrays:
    """
    Stack per-user profiles; ``allow_local=False`` forces every local cap to 0.
    """
    if len(profiles) != cfg.K:
        raise ValidationError(f"expected {cfg.K} user profiles, got {len(profiles)}")
    C = np.array([p.C for p in profiles], dtype=float)
    zeta = np.array([p.zeta for p in profiles], dtype=float)
    f_max = np.array([p.f_max for p in profiles], dtype=float)
    p_c = np.array([p.p_c for p in profiles], dtype=float)
    q_cap = cfg.T * f_max / C if allow_local else np.zeros(cfg.K)
    return UserArrays(C=C, zeta=zeta, f_max=f_max, p_c=p_c, q_cap=q_cap)


class ChannelSet:
    """Downlink (h_i) and uplink (g_i) channel vectors of the K users."""

    def __init__(self, h: np.ndarray, g: np.ndarray):
        h = np.atleast_2d(np.asarray(h, dtype=complex))
        g = np.atleast_2d(np.asarray(g, dtype=complex))
        if h.shape != g.shape:
            raise ValidationError(f"downlink shape {h.shape} does not match uplink shape {g.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
            raise ValidationError("channel vectors must be finite")
        self.h = h
        self.g = g
        self.H = np.einsum("ka,kb->kab", h, h.conj())
        self.h_norm2 = np.sum(np.abs(h) ** 2, axis=1)
        self.g_tilde = np.sum(np.abs(g) ** 2, axis=1)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def N(self) -> int:
        return self.h.shape[1]

    def check_against(self, cfg: SystemConfig):
        if (self.K, self.N) != (cfg.K, cfg.N):
            raise ValidationError(
                f"channels are {self.K} users x {self.N} antennas, config expects {cfg.K} x {cfg.N}")
        if np.any(self.g_tilde <= 0):
            raise ValidationError("every uplink channel must have a positive gain")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "h": [_complex_pairs(row) for row in self.h],
            "g": [_complex_pairs(row) for row in self.g],
        }


def _complex_pairs(values: np.ndarray) -> List[float]:
    """Interleaved re/im list of a complex array (row-major)."""
    flat = np.asarray(values, dtype=complex).ravel()
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return [float(x) for x in out]


def effective_gains(channels: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Uplink gains divided by the capacity-gap constant Gamma."""
    return channels.g_tilde / cfg.Gamma


# ---------------------------------------------------------
# Physical formulas
# ---------------------------------------------------------

def beta(x, cfg: SystemConfig):
    """Transmit power sigma2 * (2^{x/B} - 1) needed to sustain rate x."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError(f"rate must be non-negative, got {x}")
    value = cfg.sigma2 * np.expm1(x_arr * math.log(2.0) / cfg.B)
    return float(value) if np.ndim(value) == 0 else value


def beta_prime(x, cfg: SystemConfig):
    """Derivative of :func:`beta`: sigma2 * (ln2 / B) * 2^{x/B}."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError(f"rate must be non-negative, got {x}")
    value = cfg.sigma2 * (math.log(2.0) / cfg.B) * np.exp2(x_arr / cfg.B)
    return float(value) if np.ndim(value) == 0 else value


def power_from_rate(r, gain, cfg: SystemConfig):
    """Uplink power beta(r) / gain for an effective gain (already divided by Gamma)."""
    return beta(r, cfg) / np.asarray(gain, dtype=float)


def rate_from_power(p, gain, cfg: SystemConfig):
    """Achievable rate B log2(1 + p * gain / sigma2) for an effective gain."""
    p = np.asarray(p, dtype=float)
    value = cfg.B * np.log1p(p * np.asarray(gain, dtype=float) / cfg.sigma2) / math.log(2.0)
    return float(value) if np.ndim(value) == 0 else value


def harvested_energy(Q: np.ndarray, H_i: np.ndarray, cfg: SystemConfig) -> float:
    """Energy T * eta * tr(Q H_i) harvested by one user over the block."""
    Q = np.asarray(Q)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.conj().T, rtol=0.0,
                                                                  atol=1e-12 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ValidationError("energy covariance must be a square Hermitian matrix")
    return max(0.0, cfg.T * cfg.eta * trace_product(Q, H_i))


def harvested_energies(Q: np.ndarray, channels: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Vector of harvested energies for all users."""
    Q = np.asarray(Q)
    values = cfg.T * cfg.eta * np.real(np.einsum("ab,kba->k", Q, channels.H))
    return np.maximum(values, 0.0)


def local_energy(q, profile: UserProfile, cfg: SystemConfig):
    """Local computing energy zeta C^3 q^3 / T^2 at the equal-frequency optimum."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr < 0):
        raise DomainError(f"local bits must be non-negative, got {q}")
    value = profile.zeta * profile.C ** 3 * q_arr ** 3 / cfg.T ** 2
    return float(value) if np.ndim(value) == 0 else value


def offload_energy(t: float, ell: float, g_tilde: float, profile: UserProfile, cfg: SystemConfig) -> float:
    """
    Offloading energy (t / g) beta(ell / t) + p_c t with g = g_tilde / Gamma.

    beta(ell / t) is taken as 0 when ell = 0 or t = 0; ell > 0 with t = 0 is
    an infeasible pair.
    """
    if t < 0 or ell < 0:
        raise DomainError(f"offloading time and bits must be non-negative, got t={t}, ell={ell}")
    if t == 0:
        if ell > 0:
            raise InfeasiblePairError(f"{ell} bits cannot be offloaded in a zero-length slot")
        return 0.0
    gain = g_tilde / cfg.Gamma
    transmit = 0.0 if ell == 0 else (t / gain) * beta(ell / t, cfg)
    return transmit + profile.p_c * t


def offload_energies(t: np.ndarray, ell: np.ndarray, gains: np.ndarray, p_c: np.ndarray,
                     cfg: SystemConfig) -> np.ndarray:
    """
    Vectorised offloading energy; entries with ell > 0 and t = 0 become +inf.
    """
    t = np.asarray(t, dtype=float)
    ell = np.asarray(ell, dtype=float)
    rates = np.divide(ell, t, out=np.zeros_like(ell), where=t > 0)
    energy = np.where(t > 0, t * cfg.sigma2 * np.expm1(rates * math.log(2.0) / cfg.B) / gains + p_c * t, 0.0)
    return np.where((t <= 0) & (ell > 0), np.inf, energy)


def objective(alloc: "Allocation", cfg: SystemConfig) -> float:
    """Weighted computation bits sum_i omega_i (q_i + ell_i)."""
    if alloc.K != cfg.K or alloc.Q.shape != (cfg.N, cfg.N):
        raise ValidationError(
            f"allocation is {alloc.K} users x {alloc.Q.shape}, config expects {cfg.K} users x {cfg.N} antennas")
    return float(np.dot(cfg.omega, alloc.q + alloc.ell))


def computation_ceiling(cfg: SystemConfig, profiles: Sequence[UserProfile]) -> float:
    """Analytic ceiling (sum_i T f_max_i / C_i + L_max) * max_i omega_i."""
    users = stack_profiles(profiles, cfg)
    return float((users.q_cap.sum() + cfg.L_max) * cfg.omega.max())


# ---------------------------------------------------------
# Allocation, feasibility and reporting
# ---------------------------------------------------------

@dataclass
class Allocation:
    """A full primal solution (Q, t, ell, q)."""

    Q: np.ndarray
    t: np.ndarray
    ell: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=complex)
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.ell = np.asarray(self.ell, dtype=float).ravel()
        self.q = np.asarray(self.q, dtype=float).ravel()
        if not (self.t.size == self.ell.size == self.q.size):
            raise ValidationError("t, ell and q must have the same length")
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise ValidationError(f"Q must be square, got shape {self.Q.shape}")

    @property
    def K(self) -> int:
        return self.t.size

    @classmethod
    def zeros(cls, cfg: SystemConfig) -> "Allocation":
        return cls(Q=np.zeros((cfg.N, cfg.N), dtype=complex), t=np.zeros(cfg.K),
                   ell=np.zeros(cfg.K), q=np.zeros(cfg.K))

    @property
    def rates(self) -> np.ndarray:
        """r_i = ell_i / t_i (0 when t_i = 0)."""
        return np.divide(self.ell, self.t, out=np.zeros_like(self.ell), where=self.t > 0)

    def powers(self, channels: ChannelSet, cfg: SystemConfig) -> np.ndarray:
        return beta(self.rates, cfg) / effective_gains(channels, cfg)

    def frequencies(self, profiles: Sequence[UserProfile], cfg: SystemConfig) -> np.ndarray:
        users = stack_profiles(profiles, cfg)
        return users.C * self.q / cfg.T

    def to_dict(self, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig) -> Dict[str, Any]:
        return {
            "Q": _complex_pairs(self.Q),
            "t": self.t.tolist(),
            "ell": self.ell.tolist(),
            "q": self.q.tolist(),
            "r": self.rates.tolist(),
            "p": self.powers(channels, cfg).tolist(),
            "f": self.frequencies(profiles, cfg).tolist(),
        }


@dataclass
class FeasibilityReport:
    """Per-constraint slacks of an allocation (positive = satisfied)."""

    trace_slack: float
    time_slack: float
    capacity_slack: float
    eh_slack: np.ndarray
    harvested: np.ndarray
    q_lower_slack: np.ndarray
    q_upper_slack: np.ndarray
    t_lower_slack: np.ndarray
    t_upper_slack: np.ndarray
    ell_lower_slack: np.ndarray
    ell_upper_slack: np.ndarray
    psd_min_eigenvalue: float
    feasible: bool
    violations: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trace_slack": self.trace_slack,
            "time_slack": self.time_slack,
            "capacity_slack": self.capacity_slack,
            "eh_slack": self.eh_slack.tolist(),
            "harvested": self.harvested.tolist(),
            "psd_min_eigenvalue": self.psd_min_eigenvalue,
            "feasible": self.feasible,
            "violations": list(self.violations),
        }


def energy_tolerance(scale) -> np.ndarray:
    """Absolute energy tolerance for an energy of magnitude ``scale``."""
    return ENERGY_ABS_TOL + ENERGY_REL_TOL * np.abs(np.asarray(scale, dtype=float))


def check_feasibility(alloc: Allocation, channels: ChannelSet, cfg: SystemConfig,
                      profiles: Sequence[UserProfile], tol: float = 1.0) -> FeasibilityReport:
    """
    Evaluate every constraint of the problem at ``alloc``.

    ``tol`` multiplies the per-unit tolerances (energy: 1e-12 J + 1e-8
    relative, time: 1e-9 s, bits: 1e-6). Infeasibility is reported, never
    raised.
    """
    channels.check_against(cfg)
    users = stack_profiles(profiles, cfg)
    gains = effective_gains(channels, cfg)
    violations: List[str] = []

    Q = alloc.Q
    w, _ = eig(0.5 * (Q + Q.conj().T))
    trace_q = float(np.real(np.trace(Q)))
    psd_min = float(w[0])
    psd_tol = 1e-9 * max(abs(trace_q), 1e-300)
    if psd_min < -psd_tol:
        violations.append(f"Q not PSD (min eigenvalue {psd_min:.3e})")

    budget = cfg.energy_budget
    trace_slack = budget - trace_q
    if trace_slack < -tol * float(energy_tolerance(budget)):
        violations.append(f"trace budget exceeded by {-trace_slack:.3e}")

    time_slack = cfg.T - float(alloc.t.sum())
    if time_slack < -tol * TIME_TOL:
        violations.append(f"time budget exceeded by {-time_slack:.3e} s")

    capacity_slack = cfg.L_max - float(alloc.ell.sum())
    if capacity_slack < -tol * BITS_TOL:
        violations.append(f"MEC capacity exceeded by {-capacity_slack:.3e} bits")

    q_lower = alloc.q.copy()
    q_upper = users.q_cap - alloc.q
    t_lower = alloc.t.copy()
    t_upper = cfg.T - alloc.t
    ell_lower = alloc.ell.copy()
    ell_upper = cfg.L_max - alloc.ell
    for name, slack, unit_tol in (
        ("q >= 0", q_lower, BITS_TOL), ("q <= T f_max / C", q_upper, BITS_TOL),
        ("t >= 0", t_lower, TIME_TOL), ("t <= T", t_upper, TIME_TOL),
        ("ell >= 0", ell_lower, BITS_TOL), ("ell <= L_max", ell_upper, BITS_TOL),
    ):
        bad = np.flatnonzero(slack < -tol * unit_tol)
        if bad.size:
            violations.append(f"{name} violated for users {bad.tolist()}")

    harvested = harvested_energies(Q, channels, cfg)
    consumed = (users.local_coeff * np.maximum(alloc.q, 0.0) ** 3 / cfg.T ** 2
                + offload_energies(np.maximum(alloc.t, 0.0), np.maximum(alloc.ell, 0.0), gains, users.p_c, cfg))
    eh_slack = harvested - consumed
    scale = np.maximum(harvested, np.where(np.isfinite(consumed), consumed, 0.0))
    bad = np.flatnonzero(eh_slack < -tol * energy_tolerance(scale))
    if bad.size:
        violations.append(f"energy harvesting constraint violated for users {bad.tolist()}")

    return FeasibilityReport(
        trace_slack=trace_slack, time_slack=time_slack, capacity_slack=capacity_slack,
        eh_slack=eh_slack, harvested=harvested,
        q_lower_slack=q_lower, q_upper_slack=q_upper, t_lower_slack=t_lower, t_upper_slack=t_upper,
        ell_lower_slack=ell_lower, ell_upper_slack=ell_upper,
        psd_min_eigenvalue=psd_min, feasible=not violations, violations=violations,
    )


@dataclass
class SolveReport:
    """Objective, dual certificate, slacks and diagnostics of one solve."""

    primal_objective: float
    dual_bound: Optional[float]
    relative_gap: Optional[float]
    eh_slack: np.ndarray
    time_slack: float
    capacity_slack: float
    trace_slack: float
    iterations: int
    status: str
    scheme: str = "joint"
    q_spectrum: List[float] = field(default_factory=list)
    dual_point: Optional[List[float]] = None
    notes: List[str] = field(default_factory=list)

    GAP_DENOMINATOR_FLOOR = 1e-12

    @staticmethod
    def gap(dual_bound: Optional[float], primal: float) -> Optional[float]:
        if dual_bound is None:
            return None
        return (dual_bound - primal) / max(dual_bound, SolveReport.GAP_DENOMINATOR_FLOOR)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scheme": self.scheme,
            "status": self.status,
            "primal_objective": self.primal_objective,
            "dual_bound": self.dual_bound,
            "relative_gap": self.relative_gap,
            "eh_slack": np.asarray(self.eh_slack, dtype=float).tolist(),
            "time_slack": self.time_slack,
            "capacity_slack": self.capacity_slack,
            "trace_slack": self.trace_slack,
            "iterations": self.iterations,
            "q_spectrum": list(self.q_spectrum),
            "dual_point": self.dual_point,
            "notes": list(self.notes),
        }


def build_report(alloc: Allocation, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                 dual_bound: Optional[float], iterations: int, status: str, scheme: str = "joint",
                 dual_point: Optional[List[float]] = None, notes: Optional[List[str]] = None) -> SolveReport:
    """Evaluate slacks and the duality gap of ``alloc`` into a :class:`SolveReport`."""
    feas = check_feasibility(alloc, channels, cfg, profiles)
    primal = objective(alloc, cfg)
    spectrum, _ = eig(0.5 * (alloc.Q + alloc.Q.conj().T))
    return SolveReport(
        primal_objective=primal,
        dual_bound=dual_bound,
        relative_gap=SolveReport.gap(dual_bound, primal),
        eh_slack=feas.eh_slack,
        time_slack=feas.time_slack,
        capacity_slack=feas.capacity_slack,
        trace_slack=feas.trace_slack,
        iterations=iterations,
        status=status,
        scheme=scheme,
        q_spectrum=[float(x) for x in spectrum[::-1]],
        dual_point=dual_point,
        notes=list(notes or []),
    )
