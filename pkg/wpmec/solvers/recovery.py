"""
Primal recovery from an optimal dual point.

Local bits and offloading rates follow in closed form from the dual point;
the energy covariance and the offloading times come from a small SDP solved
by operator splitting (ADMM) over the span of the downlink channels, followed
by an exact LP polish of the times for the recovered covariance.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from ..errors import InternalInconsistencyError, ValidationError
from ..hermitian import hermitian, orthonormal_span, psd_project, smat, svec
from ..model import (Allocation, ChannelSet, SolveReport, SystemConfig, UserArrays, UserProfile,
                     build_report, check_feasibility, effective_gains, stack_profiles)
from .dual_solver import BRANCH_RATE, DualPoint, local_bits_star, offload_star
from .observability import SolverLogger, get_metrics, monitor_performance

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

LN2 = math.log(2.0)

SDP_TOL = 1e-7
SDP_MAX_ITER = 50_000
ADMM_ALPHA = 1.6
ADMM_SIGMA = 1e-6
ADMM_RHO = 0.1
ADMM_CHECK_EVERY = 25
ADMM_ADAPT_EVERY = 50


@dataclass
class RecoverySdp:
    """
    Data of the recovery SDP for fixed local bits and rates.

    maximise   sum_i omega_i r_i t_i
    subject to local_energy_i + time_cost_i t_i <= T eta h_i^H Q h_i
               tr(Q) <= energy_budget, sum t <= T, sum r_i t_i <= L_max,
               0 <= t_i <= T (t_i = 0 when r_i = 0), Q PSD
    """

    h: np.ndarray
    omega: np.ndarray
    rates: np.ndarray
    local_energy: np.ndarray
    time_cost: np.ndarray
    T: float
    eta: float
    energy_budget: float
    L_max: float
    multipliers: Optional[np.ndarray] = None

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        for name in ("omega", "rates", "local_energy", "time_cost"):
            value = np.asarray(getattr(self, name), dtype=float).ravel()
            if value.size != self.h.shape[0]:
                raise ValidationError(f"{name} has {value.size} entries, expected {self.h.shape[0]}")
            if not np.all(np.isfinite(value)):
                raise ValidationError(f"{name} must be finite")
            setattr(self, name, value)
        if np.any(self.rates < 0):
            raise ValidationError("offloading rates must be non-negative")
        if not np.all(np.isfinite(self.h)):
            raise ValidationError("channel vectors must be finite")

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def N(self) -> int:
        return self.h.shape[1]

    @property
    def active(self) -> np.ndarray:
        """Users with a positive offloading rate."""
        return self.rates > 0

    @property
    def h_norm2(self) -> np.ndarray:
        return np.sum(np.abs(self.h) ** 2, axis=1)

    def harvested(self, Q: np.ndarray) -> np.ndarray:
        return np.maximum(self.T * self.eta * np.real(np.einsum("ka,ab,kb->k", self.h.conj(), Q, self.h)), 0.0)

    def objective(self, t: np.ndarray) -> float:
        return float(np.dot(self.omega * self.rates, t))


@dataclass
class SdpResult:
    """Covariance, times and diagnostics of one recovery SDP solve."""

    Q: np.ndarray
    t: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    relaxed_users: List[int] = field(default_factory=list)

    def __iter__(self):
        return iter((self.Q, self.t, self.objective))


# ---------------------------------------------------------
# Closed-form parts
# ---------------------------------------------------------

def recover_q_opt(dp: DualPoint, profiles: Sequence[UserProfile], cfg: SystemConfig,
                  allow_local: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Local bits and equal CPU frequencies C_i q_i / T at the dual point."""
    users = stack_profiles(profiles, cfg, allow_local=allow_local)
    q = local_bits_star(dp.lam, cfg.omega, users, cfg.T)
    return q, users.C * q / cfg.T


def recover_rates(dp: DualPoint, channels: ChannelSet, profiles: Sequence[UserProfile],
                  cfg: SystemConfig) -> np.ndarray:
    """Offloading rates at the dual point (0 when offloading is shut off)."""
    users = stack_profiles(profiles, cfg)
    _, _, r, branch, _ = offload_star(dp.lam, dp.mu, dp.theta, effective_gains(channels, cfg),
                                      users.p_c, cfg.omega, cfg)
    return np.where(branch == BRANCH_RATE, r, 0.0)


def build_recovery_sdp(q: np.ndarray, r: np.ndarray, channels: ChannelSet, profiles: Sequence[UserProfile],
                       cfg: SystemConfig, multipliers: Optional[np.ndarray] = None) -> RecoverySdp:
    users = stack_profiles(profiles, cfg)
    gains = effective_gains(channels, cfg)
    r = np.asarray(r, dtype=float)
    time_cost = cfg.sigma2 * np.expm1(r * LN2 / cfg.B) / gains + users.p_c
    return RecoverySdp(
        h=channels.h, omega=cfg.omega, rates=r,
        local_energy=users.local_coeff * np.asarray(q, dtype=float) ** 3 / cfg.T ** 2,
        time_cost=time_cost, T=cfg.T, eta=cfg.eta, energy_budget=cfg.energy_budget, L_max=cfg.L_max,
        multipliers=multipliers,
    )


# ---------------------------------------------------------
# Exact time allocation for a fixed covariance
# ---------------------------------------------------------

def optimal_times(sdp: RecoverySdp, harvested: np.ndarray) -> np.ndarray:
    """
    Offloading times maximising sum omega r t for fixed harvested energies.

    Users whose fixed local energy already exceeds the harvested energy get t = 0.
    """
    K = sdp.K
    t_ub = np.zeros(K)
    room = np.maximum(harvested - sdp.local_energy, 0.0)
    active = sdp.active
    t_ub[active] = np.minimum(sdp.T, room[active] / sdp.time_cost[active])
    if sdp.L_max <= 0 or not np.any(t_ub > 0):
        return np.zeros(K)

    weights = sdp.omega * sdp.rates * sdp.T
    c = -weights / weights.max()
    A_ub = np.vstack([np.ones(K), sdp.rates * sdp.T / sdp.L_max])
    b_ub = np.ones(2)
    bounds = [(0.0, float(ub / sdp.T)) for ub in t_ub]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        logger.warning(f"Time allocation LP failed ({res.message}); offloading switched off")
        return np.zeros(K)

    t = np.clip(res.x * sdp.T, 0.0, t_ub)
    total = t.sum()
    if total > sdp.T:
        t *= sdp.T / total
    bits = float(np.dot(sdp.rates, t))
    if bits > sdp.L_max:
        t *= sdp.L_max / bits
    return t


def refit_local_bits(sdp: RecoverySdp, Q: np.ndarray, t: np.ndarray, users: UserArrays) -> np.ndarray:
    """Spend each user's leftover harvested energy on local computing, up to its cap."""
    available = sdp.harvested(Q) - sdp.time_cost * np.where(t > 0, t, 0.0)
    available = np.maximum(available, 0.0) * (1.0 - 1e-12)
    q = np.cbrt(available * sdp.T ** 2 / users.local_coeff)
    return np.minimum(q, users.q_cap)


# ---------------------------------------------------------
# Operator-splitting SDP solver
# ---------------------------------------------------------

class _AdmmProblem:
    """
    Normalised conic form of the recovery SDP over X = Q_span / energy_budget.

    Variables x = [svec(X), t / T, elastic EH slacks]; rows z = A x with
    svec(X) constrained to the PSD cone and every other row to a box.
    """

    def __init__(self, sdp: RecoverySdp, U: np.ndarray):
        self.d = d = U.shape[1]
        K = sdp.K
        self.m = m = d * d
        self.K = K

        reduced = sdp.h @ U.conj()
        norms = sdp.h_norm2
        hv = np.zeros((K, m))
        for i in range(K):
            if norms[i] > 0:
                hv[i] = svec(np.outer(reduced[i], reduced[i].conj())) / norms[i]
        full = sdp.T * sdp.eta * sdp.energy_budget * norms
        self.S = np.where(full > 0, full, full.max() if full.max() > 0 else 1.0)

        n_x = m + 2 * K
        n_rows = m + K + 3 + 2 * K
        A = np.zeros((n_rows, n_x))
        lower = np.full(n_rows, -np.inf)
        upper = np.full(n_rows, np.inf)

        A[:m, :m] = np.eye(m)
        eh = slice(m, m + K)
        A[eh, :m] = -hv
        A[eh, m:m + K] = np.diag(sdp.time_cost * sdp.T / self.S)
        A[eh, m + K:] = -np.eye(K)
        upper[eh] = -sdp.local_energy / self.S

        row = m + K
        A[row, :m] = svec(np.eye(d))
        upper[row] = 1.0
        A[row + 1, m:m + K] = 1.0
        upper[row + 1] = 1.0
        if sdp.L_max > 0:
            A[row + 2, m:m + K] = sdp.rates * sdp.T / sdp.L_max
            upper[row + 2] = 1.0
        else:
            r_max = sdp.rates.max()
            A[row + 2, m:m + K] = sdp.rates / r_max if r_max > 0 else 0.0
            upper[row + 2] = 0.0

        box = slice(row + 3, row + 3 + K)
        A[box, m:m + K] = np.eye(K)
        lower[box] = 0.0
        upper[box] = np.where(sdp.active, 1.0, 0.0)

        slack = slice(row + 3 + K, n_rows)
        A[slack, m + K:] = np.eye(K)
        lower[slack] = 0.0

        weights = sdp.omega * sdp.rates * sdp.T
        self.c_scale = float(weights.max()) if weights.max() > 0 else 1.0
        if sdp.multipliers is not None:
            penalty = 10.0 * float(np.max(np.asarray(sdp.multipliers) * self.S)) / self.c_scale + 1.0
        else:
            penalty = 1e3
        self.q = np.concatenate([np.zeros(m), -weights / self.c_scale, np.full(K, penalty)])

        self.A = A
        self.lower = lower
        self.upper = upper
        self.equality = np.isfinite(lower) & (lower == upper)

    def project(self, v: np.ndarray) -> np.ndarray:
        out = np.clip(v, self.lower, self.upper)
        out[:self.m] = svec(psd_project(smat(v[:self.m], self.d)))
        return out

    def solve(self, tol: float, max_iter: int) -> Tuple[np.ndarray, str, int, float, float]:
        A, q = self.A, self.q
        n_x = A.shape[1]
        rho = ADMM_RHO

        def rho_vector(base: float) -> np.ndarray:
            return np.where(self.equality, 1e3 * base, base)

        def factor(rho_vec: np.ndarray):
            return cho_factor(ADMM_SIGMA * np.eye(n_x) + A.T @ (rho_vec[:, None] * A))

        rho_vec = rho_vector(rho)
        kkt = factor(rho_vec)
        x = np.zeros(n_x)
        z = self.project(np.zeros(A.shape[0]))
        y = np.zeros(A.shape[0])
        status = "iteration-limit"
        r_prim = r_dual = math.inf
        iterations = 0

        for iterations in range(1, max_iter + 1):
            x_tilde = cho_solve(kkt, ADMM_SIGMA * x - q + A.T @ (rho_vec * z - y))
            z_tilde = A @ x_tilde
            x = ADMM_ALPHA * x_tilde + (1.0 - ADMM_ALPHA) * x
            z_relaxed = ADMM_ALPHA * z_tilde + (1.0 - ADMM_ALPHA) * z
            z_next = self.project(z_relaxed + y / rho_vec)
            y = y + rho_vec * (z_relaxed - z_next)
            z = z_next

            if iterations % ADMM_CHECK_EVERY:
                continue
            Ax = A @ x
            ATy = A.T @ y
            r_prim = float(np.max(np.abs(Ax - z)))
            r_dual = float(np.max(np.abs(q + ATy)))
            prim_scale = max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z))))
            dual_scale = max(float(np.max(np.abs(ATy))), float(np.max(np.abs(q))))
            if r_prim <= tol * (1.0 + prim_scale) and r_dual <= tol * (1.0 + dual_scale):
                status = "converged"
                break

            if iterations % ADMM_ADAPT_EVERY == 0:
                ratio = math.sqrt((r_prim / max(prim_scale, 1e-30)) / max(r_dual / max(dual_scale, 1e-30), 1e-30))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    rho_vec = rho_vector(rho)
                    kkt = factor(rho_vec)

        X = smat(z[:self.m], self.d)
        return X, status, iterations, r_prim, r_dual


@monitor_performance("recovery_sdp")
def solve_recovery_sdp(sdp: RecoverySdp, tol: float = SDP_TOL, max_iter: int = SDP_MAX_ITER) -> SdpResult:
    """
    Solve the recovery SDP.

    The covariance is restricted to the span of the downlink channels. A
    one-dimensional span is solved exactly (the full budget along it); larger
    spans run ADMM with elastic EH constraints. The returned covariance always
    uses the whole trace budget and the times come from an exact LP for it.
    """
    U = orthonormal_span(sdp.h)
    d = U.shape[1]
    iterations = 0
    r_prim = r_dual = 0.0

    if d == 0:
        Q = np.zeros((sdp.N, sdp.N), dtype=complex)
        status = "exact"
    else:
        if d == 1:
            X = np.ones((1, 1), dtype=complex)
            status = "exact"
        else:
            X, status, iterations, r_prim, r_dual = _AdmmProblem(sdp, U).solve(tol, max_iter)
            trace = float(np.real(np.trace(X)))
            X = X / trace if trace > 0 else np.eye(d, dtype=complex) / d
        Q = hermitian(sdp.energy_budget * (U @ X @ U.conj().T))
        Q = psd_project(Q)

    harvested = sdp.harvested(Q)
    t = optimal_times(sdp, harvested)
    relaxed = np.flatnonzero(harvested < sdp.local_energy).tolist()
    metrics.increment_counter(f"recovery_sdp_{status.replace('-', '_')}")
    if status == "iteration-limit":
        logger.info(f"Recovery SDP hit the iteration limit (primal {r_prim:.2e}, dual {r_dual:.2e})")
    if relaxed:
        logger.debug(f"Recovery SDP relaxed EH constraints of users {relaxed}")
    return SdpResult(Q=Q, t=t, objective=sdp.objective(t), status=status, iterations=iterations,
                     primal_residual=r_prim, dual_residual=r_dual, relaxed_users=relaxed)


# ---------------------------------------------------------
# Assembly
# ---------------------------------------------------------

def recover_allocation(dp: DualPoint, channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                       allow_local: bool = True, tol: float = SDP_TOL,
                       max_iter: int = SDP_MAX_ITER) -> Tuple[np.ndarray, np.ndarray, np.ndarray, SdpResult]:
    """
    Closed forms plus the recovery SDP, with local bits refit to the covariance.

    Returns:
        (q, r, t, sdp_result)
    """
    q_opt, _ = recover_q_opt(dp, profiles, cfg, allow_local=allow_local)
    r_opt = recover_rates(dp, channels, profiles, cfg)
    sdp = build_recovery_sdp(q_opt, r_opt, channels, profiles, cfg, multipliers=dp.lam)
    result = solve_recovery_sdp(sdp, tol=tol, max_iter=max_iter)
    users = stack_profiles(profiles, cfg, allow_local=allow_local)
    q = refit_local_bits(sdp, result.Q, result.t, users)
    return q, r_opt, result.t, result


def assemble_solution(q_opt: np.ndarray, r_opt: np.ndarray, Q_opt: np.ndarray, t_opt: np.ndarray,
                      channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                      dual_bound: Optional[float] = None, iterations: int = 0, status: str = "converged",
                      scheme: str = "joint", dual_point: Optional[List[float]] = None,
                      notes: Optional[List[str]] = None) -> Tuple[Allocation, SolveReport]:
    """Form ell = r * t, verify feasibility and build the report."""
    t = np.asarray(t_opt, dtype=float)
    alloc = Allocation(Q=Q_opt, t=t, ell=np.asarray(r_opt, dtype=float) * t, q=q_opt)
    feas = check_feasibility(alloc, channels, cfg, profiles)
    if not feas.feasible:
        raise InternalInconsistencyError(f"assembled allocation is infeasible: {'; '.join(feas.violations)}")
    report = build_report(alloc, channels, profiles, cfg, dual_bound=dual_bound, iterations=iterations,
                          status=status, scheme=scheme, dual_point=dual_point, notes=notes)
    return alloc, report
