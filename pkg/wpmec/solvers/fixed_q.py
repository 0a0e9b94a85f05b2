"""
Computation-rate maximisation with the energy covariance frozen.

With Q fixed the harvested energies are constants and the problem is convex
in (t, ell, q) with two coupling constraints (time and MEC capacity). Their
multipliers (mu, theta) are found by a two-dimensional ellipsoid method; for
each (mu, theta) every user's EH multiplier is the root of
harvested - consumed(lambda), located by bisection in log space.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ValidationError
from ..hermitian import eig, hermitian
from ..model import (Allocation, ChannelSet, SolveReport, SystemConfig, UserProfile, build_report,
                     effective_gains, harvested_energies, stack_profiles)
from .dual_solver import BRANCH_RATE, LN2, consumed_energy, local_bits_star, offload_star
from .ellipsoid import CutOracleResult, initial_ellipsoid_box, run
from .observability import SolverLogger, get_metrics, monitor_performance
from .recovery import build_recovery_sdp, optimal_times, refit_local_bits

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

FIXED_Q_TOL = 1e-6
BISECTION_STEPS = 40
LAMBDA_DECADES = 16.0


class FixedQProblem:
    """
    Dual of the fixed-covariance problem in the coupling multipliers (mu, theta).

    Args:
        Q: PSD energy covariance with tr(Q) <= T P_max
        channels, profiles, cfg: problem instance
        allow_local: False pins every local cap to zero
    """

    def __init__(self, Q: np.ndarray, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                 allow_local: bool = True):
        channels.check_against(cfg)
        Q = hermitian(Q)
        if Q.shape != (cfg.N, cfg.N):
            raise ValidationError(f"Q must be {cfg.N}x{cfg.N}, got {Q.shape}")
        w, _ = eig(Q)
        trace = float(np.real(np.trace(Q)))
        if w[0] < -1e-9 * max(trace, 1e-300):
            raise ValidationError(f"Q must be positive semidefinite (min eigenvalue {w[0]:.3e})")
        if trace > cfg.energy_budget * (1.0 + 1e-9) + 1e-300:
            raise ValidationError(f"tr(Q) = {trace:.6g} exceeds the budget {cfg.energy_budget:.6g}")

        self.Q = Q
        self.channels = channels
        self.profiles = profiles
        self.cfg = cfg
        self.allow_local = allow_local
        self.users = stack_profiles(profiles, cfg, allow_local=allow_local)
        self.gains = effective_gains(channels, cfg)
        self.omega = cfg.omega
        self.harvested = harvested_energies(Q, channels, cfg)
        self.powered = self.harvested > 0
        self._E = np.where(self.powered, self.harvested, 1.0)

    @property
    def ceiling(self) -> float:
        return float((self.users.q_cap.sum() + self.cfg.L_max) * self.omega.max())

    # -- per-user EH multipliers -------------------------------------------

    def _maximisers(self, lam: np.ndarray, mu: float, theta: float):
        q = local_bits_star(lam, self.omega, self.users, self.cfg.T)
        t, ell, r, branch, _ = offload_star(lam, mu, theta, self.gains, self.users.p_c, self.omega, self.cfg)
        return q, t, ell, r, branch

    def _lambda_ceiling(self, theta: float) -> np.ndarray:
        """A multiplier at which each user consumes less than it harvests."""
        cfg = self.cfg
        coeff = self.users.local_coeff
        q_e = np.cbrt(self._E * cfg.T ** 2 / coeff)
        lam_local = self.omega * cfg.T ** 2 / (3.0 * coeff * q_e ** 2)
        lam_offload = np.maximum(self.omega - theta, 0.0) * cfg.B * self.gains / (cfg.sigma2 * LN2)
        return 4.0 * np.maximum(np.maximum(lam_local, lam_offload), np.finfo(float).tiny)

    def multipliers(self, mu: float, theta: float) -> np.ndarray:
        """EH multipliers balancing consumption against the harvested energies."""
        log_hi = np.log(self._lambda_ceiling(theta))
        log_lo = log_hi - LAMBDA_DECADES * math.log(10.0)
        for _ in range(BISECTION_STEPS):
            log_mid = 0.5 * (log_lo + log_hi)
            lam = np.exp(log_mid)
            q, t, ell, _, _ = self._maximisers(lam, mu, theta)
            over = consumed_energy(q, t, ell, self.users, self.gains, self.cfg) > self._E
            log_lo = np.where(over, log_mid, log_lo)
            log_hi = np.where(over, log_hi, log_mid)
        lam = np.exp(log_hi)

        cap_energy = self.users.local_coeff * self.users.q_cap ** 3 / self.cfg.T ** 2
        idle = (self.omega <= theta) & (cap_energy <= self._E)
        return np.where(idle, 0.0, lam)

    def inner(self, mu: float, theta: float) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Dual value and EH-tight primal candidates at (mu, theta).

        Returns:
            (value, lam, t, ell, r)
        """
        cfg = self.cfg
        lam = self.multipliers(mu, theta)
        q, t, ell, r, branch = self._maximisers(lam, mu, theta)
        consumed = consumed_energy(q, t, ell, self.users, self.gains, cfg)
        per_user = (lam * self._E + self.omega * q + (self.omega - theta) * ell
                    - lam * consumed - mu * t)
        per_user = np.where(self.powered, per_user, 0.0)
        value = float(mu * cfg.T + theta * cfg.L_max + per_user.sum())

        rate_users = (branch == BRANCH_RATE) & (r * cfg.T <= cfg.L_max) & self.powered
        time_cost = cfg.sigma2 * np.expm1(r * LN2 / cfg.B) / self.gains + self.users.p_c
        local = self.users.local_coeff * q ** 3 / cfg.T ** 2
        tight = np.clip((self._E - local) / time_cost, 0.0, cfg.T)
        t = np.where(rate_users, tight, np.where(self.powered, t, 0.0))
        ell = np.where(rate_users, r * t, np.where(self.powered, ell, 0.0))
        return value, lam, t, ell, np.where(branch == BRANCH_RATE, r, 0.0)

    def oracle(self, x: np.ndarray) -> CutOracleResult:
        negative = np.flatnonzero(x < 0)
        if negative.size:
            cut = np.zeros(2)
            cut[negative[np.argmin(x[negative])]] = -1.0
            return CutOracleResult(kind="feasibility", gradient=cut)
        value, _, t, ell, _ = self.inner(float(x[0]), float(x[1]))
        gradient = np.array([self.cfg.T - t.sum(), self.cfg.L_max - ell.sum()])
        return CutOracleResult(kind="objective", gradient=gradient, value=value)

    # -- primal ------------------------------------------------------------

    def primal(self, mu: float, theta: float) -> Allocation:
        """Allocation for the multipliers (mu, theta): closed-form q and r, exact LP in t."""
        cfg = self.cfg
        lam = self.multipliers(mu, theta)
        q, _, _, r, branch = self._maximisers(lam, mu, theta)
        rates = np.where(branch == BRANCH_RATE, r, 0.0)
        rates = np.where(self.powered, rates, 0.0)
        q = np.where(self.powered, q, 0.0)

        sdp = build_recovery_sdp(q, rates, self.channels, self.profiles, cfg, multipliers=lam)
        t = optimal_times(sdp, self.harvested)
        q = refit_local_bits(sdp, self.Q, t, self.users)
        return Allocation(Q=self.Q, t=t, ell=rates * t, q=q)


@monitor_performance("fixed_q_solve")
def solve_fixed_q(Q: np.ndarray, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                  allow_local: bool = True, tol: float = FIXED_Q_TOL, max_iter: Optional[int] = None,
                  scheme: str = "fixed-q") -> Tuple[Allocation, SolveReport]:
    """
    Solve the problem with the energy covariance frozen at ``Q``.

    Returns:
        (allocation, report) where the report's dual bound certifies the
        fixed-Q optimum
    """
    problem = FixedQProblem(Q, channels, profiles, cfg, allow_local=allow_local)
    ceiling = problem.ceiling
    if not np.any(problem.powered) or ceiling <= 0:
        alloc = Allocation(Q=problem.Q, t=np.zeros(cfg.K), ell=np.zeros(cfg.K), q=np.zeros(cfg.K))
        report = build_report(alloc, channels, profiles, cfg, dual_bound=0.0, iterations=0,
                              status="converged", scheme=scheme, notes=["no harvested energy"])
        return alloc, report

    mu_ub = ceiling / cfg.T
    theta_ub = min(float(problem.omega.max()), ceiling / cfg.L_max) if cfg.L_max > 0 else float(problem.omega.max())
    result = run(problem.oracle, initial_ellipsoid_box(np.array([mu_ub, theta_ub])), tol=tol, max_iter=max_iter)
    if result.best_point is None:
        raise ValidationError(f"fixed-Q dual found no feasible multipliers ({result.status})")

    mu, theta = (float(v) for v in result.best_point)
    alloc = problem.primal(mu, theta)
    primal = float(np.dot(cfg.omega, alloc.q + alloc.ell))
    gap = SolveReport.gap(result.best_value, primal)
    status = "converged" if result.status == "converged" or (gap is not None and gap <= 1e-4) else result.status
    if gap is not None and gap > 1e-4:
        logger.debug(f"Fixed-Q solve left a relative gap of {gap:.2e}")
    metrics.increment_counter("fixed_q_iterations", result.iterations)
    report = build_report(alloc, channels, profiles, cfg, dual_bound=result.best_value,
                          iterations=result.iterations, status=status, scheme=scheme,
                          dual_point=[mu, theta])
    return alloc, report
