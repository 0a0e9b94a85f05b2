"""
Dual function of the weighted computation-rate maximisation problem.

The partial Lagrangian decouples into one energy-covariance subproblem, K
local-computing subproblems and K offloading subproblems, each solved in
closed form. Dual points are laid out as vectors
``[lambda_1, ..., lambda_K, mu, rho, theta]``.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import lambertw

from ..errors import CutContractError, DualInfeasibleError, ValidationError
from ..hermitian import max_eigpair
from ..model import (ChannelSet, SystemConfig, UserArrays, UserProfile, effective_gains,
                     stack_profiles)
from .ellipsoid import CutOracleResult

LN2 = math.log(2.0)

# Branch labels of the offloading subproblem
BRANCH_FREE_OFFLOAD = 1
BRANCH_NO_GAIN = 2
BRANCH_BELOW_THRESHOLD = 3
BRANCH_RATE = 4

FEASIBILITY_RTOL = 1e-12
TIE_RTOL = 1e-12
# Rates are capped at this many bits/s/Hz to keep 2^(r/B) finite
MAX_SPECTRAL_EFFICIENCY = 512.0


@dataclass
class DualPoint:
    """Lagrange multipliers (lambda, mu, rho, theta)."""

    lam: np.ndarray
    mu: float
    rho: float
    theta: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).ravel()
        values = np.concatenate([self.lam, [self.mu, self.rho, self.theta]])
        if not np.all(np.isfinite(values)):
            raise ValidationError("dual point components must be finite")

    @property
    def K(self) -> int:
        return self.lam.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.lam, [self.mu, self.rho, self.theta]])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "DualPoint":
        x = np.asarray(x, dtype=float).ravel()
        if x.size < 4:
            raise ValidationError(f"dual vector needs at least 4 entries, got {x.size}")
        return cls(lam=x[:-3], mu=float(x[-3]), rho=float(x[-2]), theta=float(x[-1]))

    def to_list(self) -> List[float]:
        return [float(v) for v in self.to_vector()]


@dataclass
class SubproblemSolution:
    """
    Maximisers of the per-user subproblems at a dual point.

    ``ell_star = r_star * t_star`` except in the free-offload branch
    (lambda_i = 0), where t_star = 0 and ell_star = L_max. When r_star T would
    exceed L_max the slot shrinks to where the switching function vanishes and
    r_star is the rate actually used.
    """

    q_star: np.ndarray
    t_star: np.ndarray
    ell_star: np.ndarray
    r_star: np.ndarray
    branch: np.ndarray
    nonunique: np.ndarray


# ---------------------------------------------------------
# Closed-form subproblems (vectorised over users)
# ---------------------------------------------------------

def local_bits_star(lam: np.ndarray, omega: np.ndarray, users: UserArrays, T: float) -> np.ndarray:
    """Optimal local bits: the cap when lambda_i = 0, else min(sqrt(omega T^2 / (3 lambda zeta C^3)), cap)."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        interior = np.sqrt(omega * T ** 2 / (3.0 * lam * users.local_coeff))
    return np.where(lam > 0, np.minimum(interior, users.q_cap), users.q_cap)


def switching_root(lam: np.ndarray, mu: float, gains: np.ndarray, p_c: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """
    Rate r0 at which (lambda / g)(beta(r) - r beta'(r)) + mu + lambda p_c = 0.

    With x = r ln2 / B the root solves e^x (x - 1) + 1 = kappa for
    kappa = (mu + lambda p_c) g / (lambda sigma2), i.e. x = 1 + W0((kappa - 1) / e).
    """
    kappa = (mu + lam * p_c) * gains / (lam * cfg.sigma2)
    x = 1.0 + np.real(lambertw((kappa - 1.0) / math.e))
    return cfg.B * np.maximum(x, 0.0) / LN2


def offload_star(lam: np.ndarray, mu: float, theta: float, gains: np.ndarray, p_c: np.ndarray,
                 omega: np.ndarray, cfg: SystemConfig) -> Tuple[np.ndarray, ...]:
    """
    Optimal (t, ell, r) of the offloading subproblems with branch labels.

    Returns:
        (t, ell, r, branch, nonunique)
    """
    lam = np.asarray(lam, dtype=float)
    excess = omega - theta
    threshold = lam * cfg.sigma2 * LN2 / (cfg.B * gains)
    positive = lam > 0
    offload = positive & (excess > threshold)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(offload, excess * cfg.B * gains / (lam * cfg.sigma2 * LN2), 1.0)
    r = np.where(offload, cfg.B * np.minimum(np.log2(ratio), MAX_SPECTRAL_EFFICIENCY), 0.0)

    b = cfg.sigma2 * np.expm1(r * LN2 / cfg.B)
    b_prime = cfg.sigma2 * (LN2 / cfg.B) * np.exp2(r / cfg.B)
    with np.errstate(divide="ignore", invalid="ignore"):
        switch = np.where(offload, lam / gains * (b - r * b_prime) + mu + lam * p_c, 0.0)
    tie = TIE_RTOL * (mu + lam * p_c + 1.0)
    full = offload & (switch < -tie)
    nonunique = offload & (np.abs(switch) <= tie)

    t = np.where(full, cfg.T, 0.0)
    ell = np.where(full, r * cfg.T, 0.0)

    # With ell capped at L_max the best slot is where the switching function vanishes
    capped = full & (r * cfg.T > cfg.L_max)
    if np.any(capped):
        r_zero = switching_root(lam[capped], mu, gains[capped], p_c[capped], cfg)
        with np.errstate(divide="ignore"):
            t_capped = np.minimum(cfg.T, cfg.L_max / r_zero)
        t[capped] = t_capped
        ell[capped] = np.where(t_capped > 0, cfg.L_max, 0.0)
        r[capped] = np.divide(cfg.L_max, t_capped, out=np.zeros_like(t_capped), where=t_capped > 0)

    free = (~positive) & (excess > 0)
    ell = np.where(free, cfg.L_max, ell)

    branch = np.select(
        [free, ~positive, ~offload],
        [BRANCH_FREE_OFFLOAD, BRANCH_NO_GAIN, BRANCH_BELOW_THRESHOLD],
        default=BRANCH_RATE,
    )
    return t, ell, r, branch, nonunique


def consumed_energy(q: np.ndarray, t: np.ndarray, ell: np.ndarray, users: UserArrays, gains: np.ndarray,
                    cfg: SystemConfig) -> np.ndarray:
    """Local plus offloading energy per user; the beta term is 0 when t = 0."""
    local = users.local_coeff * q ** 3 / cfg.T ** 2
    rates = np.divide(ell, t, out=np.zeros_like(ell, dtype=float), where=t > 0)
    transmit = np.where(t > 0, t * cfg.sigma2 * np.expm1(rates * LN2 / cfg.B) / gains, 0.0)
    return local + transmit + users.p_c * t


def solve_q_subproblem(lambda_i: float, profile: UserProfile, cfg: SystemConfig, omega_i: float,
                       allow_local: bool = True) -> float:
    """Closed-form optimum of omega q - lambda zeta C^3 q^3 / T^2 over [0, T f_max / C]."""
    cap = cfg.T * profile.f_max / profile.C if allow_local else 0.0
    users = UserArrays(C=np.array([profile.C]), zeta=np.array([profile.zeta]),
                       f_max=np.array([profile.f_max]), p_c=np.array([profile.p_c]), q_cap=np.array([cap]))
    return float(local_bits_star(np.array([lambda_i]), np.array([omega_i]), users, cfg.T)[0])


def solve_t_ell_subproblem(lambda_i: float, mu: float, theta: float, g_tilde_i: float, profile: UserProfile,
                           cfg: SystemConfig, omega_i: float) -> Tuple[float, float, float, bool]:
    """
    Closed-form optimum of the offloading subproblem of one user.

    Returns:
        (t_star, ell_star, r_star, nonunique_flag)
    """
    t, ell, r, _, nonunique = offload_star(
        np.array([lambda_i]), mu, theta, np.array([g_tilde_i / cfg.Gamma]),
        np.array([profile.p_c]), np.array([omega_i]), cfg)
    return float(t[0]), float(ell[0]), float(r[0]), bool(nonunique[0])


# ---------------------------------------------------------
# Dual problem
# ---------------------------------------------------------

class DualProblem:
    """
    Dual function, subgradients and cuts of one problem instance.

    Args:
        channels: channel realisation
        profiles: per-user computation profiles
        cfg: system configuration
        allow_local: False pins every local cap to zero (offloading only)
    """

    def __init__(self, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                 allow_local: bool = True):
        channels.check_against(cfg)
        self.channels = channels
        self.cfg = cfg
        self.users = stack_profiles(profiles, cfg, allow_local=allow_local)
        self.gains = effective_gains(channels, cfg)
        self.omega = cfg.omega
        self.K = cfg.K
        self.dimension = cfg.K + 3
        self._TH = cfg.T * cfg.eta * channels.H

    # -- dual domain -------------------------------------------------------

    def dual_matrix(self, dp: DualPoint) -> np.ndarray:
        """G(lambda, rho) = sum_i T eta lambda_i H_i - rho I."""
        G = np.einsum("k,kab->ab", dp.lam, self._TH)
        return G - dp.rho * np.eye(self.cfg.N)

    def feasibility(self, dp: DualPoint) -> Tuple[bool, float, np.ndarray]:
        """(is_feasible, largest eigenvalue of G, its eigenvector)."""
        w_max, v = max_eigpair(self.dual_matrix(dp))
        scale = max(abs(dp.rho), float(np.dot(np.abs(dp.lam), self.cfg.T * self.cfg.eta * self.channels.h_norm2)),
                    np.finfo(float).tiny)
        nonnegative = bool(np.all(dp.to_vector() >= 0))
        return nonnegative and w_max <= FEASIBILITY_RTOL * scale, w_max, v

    def feasibility_cut(self, dp: DualPoint) -> np.ndarray:
        """Subgradient of the violated dual-domain constraint at ``dp``."""
        x = dp.to_vector()
        negative = np.flatnonzero(x < 0)
        if negative.size:
            j = negative[np.argmin(x[negative])]
            cut = np.zeros(self.dimension)
            cut[j] = -1.0
            return cut
        feasible, _, v = self.feasibility(dp)
        if feasible:
            raise CutContractError("feasibility cut requested at a dual-feasible point")
        cut = np.zeros(self.dimension)
        cut[:self.K] = np.real(np.einsum("a,kab,b->k", v.conj(), self._TH, v))
        cut[self.K + 1] = -1.0
        return cut

    # -- dual function -----------------------------------------------------

    def maximisers(self, dp: DualPoint) -> SubproblemSolution:
        q = local_bits_star(dp.lam, self.omega, self.users, self.cfg.T)
        t, ell, r, branch, nonunique = offload_star(
            dp.lam, dp.mu, dp.theta, self.gains, self.users.p_c, self.omega, self.cfg)
        return SubproblemSolution(q_star=q, t_star=t, ell_star=ell, r_star=r, branch=branch, nonunique=nonunique)

    def consumed_energy(self, sub: SubproblemSolution) -> np.ndarray:
        """Local plus offloading energy of the maximisers (beta term 0 when t = 0)."""
        return consumed_energy(sub.q_star, sub.t_star, sub.ell_star, self.users, self.gains, self.cfg)

    def lagrangian_value(self, dp: DualPoint, sub: SubproblemSolution) -> float:
        """Partial Lagrangian at Q = 0 and the given (t, ell, q)."""
        cfg = self.cfg
        consumed = self.consumed_energy(sub)
        per_user = (self.omega * sub.q_star + (self.omega - dp.theta) * sub.ell_star
                    - dp.lam * consumed - dp.mu * sub.t_star)
        return float(dp.mu * cfg.T + dp.rho * cfg.energy_budget + dp.theta * cfg.L_max + per_user.sum())

    def evaluate(self, dp: DualPoint, check: bool = True) -> Tuple[float, SubproblemSolution]:
        """Dual function value and the subproblem maximisers."""
        if check and not self.feasibility(dp)[0]:
            raise DualInfeasibleError("dual point lies outside the dual domain")
        sub = self.maximisers(dp)
        return self.lagrangian_value(dp, sub), sub

    def subgradient(self, dp: DualPoint, sub: SubproblemSolution) -> np.ndarray:
        """[-consumed_i ..., T - sum t, T P_max, L_max - sum ell]."""
        cfg = self.cfg
        g = np.empty(self.dimension)
        g[:self.K] = -self.consumed_energy(sub)
        g[self.K] = cfg.T - sub.t_star.sum()
        g[self.K + 1] = cfg.energy_budget
        g[self.K + 2] = cfg.L_max - sub.ell_star.sum()
        return g

    def oracle(self, x: np.ndarray) -> CutOracleResult:
        """Cut oracle for the ellipsoid method."""
        dp = DualPoint.from_vector(x)
        if np.any(dp.to_vector() < 0) or not self.feasibility(dp)[0]:
            return CutOracleResult(kind="feasibility", gradient=self.feasibility_cut(dp))
        value, sub = self.evaluate(dp, check=False)
        return CutOracleResult(kind="objective", gradient=self.subgradient(dp, sub), value=value)


# ---------------------------------------------------------
# Functional API
# ---------------------------------------------------------

def dual_feasible(dp: DualPoint, channels: ChannelSet, cfg: SystemConfig) -> Tuple[bool, float, np.ndarray]:
    """Whether G(lambda, rho) is negative semidefinite and all multipliers are non-negative."""
    problem = DualProblem(channels, _placeholder_profiles(cfg), cfg)
    return problem.feasibility(dp)


def feasibility_cut(dp: DualPoint, channels: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Cut for the violated dual-domain constraint (raises at a feasible point)."""
    problem = DualProblem(channels, _placeholder_profiles(cfg), cfg)
    return problem.feasibility_cut(dp)


def evaluate_dual(dp: DualPoint, channels: ChannelSet, profiles: Sequence[UserProfile],
                  cfg: SystemConfig) -> Tuple[float, SubproblemSolution]:
    """Dual function value at a dual-feasible point with its maximisers."""
    return DualProblem(channels, profiles, cfg).evaluate(dp)


def dual_subgradient(dp: DualPoint, sub: SubproblemSolution, channels: ChannelSet,
                     profiles: Sequence[UserProfile], cfg: SystemConfig) -> np.ndarray:
    """Subgradient of the dual function at ``dp`` given its maximisers."""
    return DualProblem(channels, profiles, cfg).subgradient(dp, sub)


def _placeholder_profiles(cfg: SystemConfig, profile: Optional[UserProfile] = None) -> List[UserProfile]:
    # The dual domain only depends on the channels.
    return [profile or UserProfile.reference_defaults()] * cfg.K
