"""
Central-cut ellipsoid method for convex minimisation with cut oracles.

The ellipsoid is stored in per-coordinate normalised coordinates
``x = scale * z``; ``center`` is in original coordinates and ``P`` describes
{z : (z - c/scale)^T P^{-1} (z - c/scale) <= 1}.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import ValidationError
from ..model import ChannelSet, SystemConfig, UserProfile, stack_profiles
from .observability import SolverLogger, get_metrics, monitor_performance

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

DEFAULT_TOL = 1e-5
Q_MIN_BITS = 1.0


@dataclass
class CutOracleResult:
    """Answer of a cut oracle at the current center."""

    kind: str
    gradient: np.ndarray
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("objective", "feasibility"):
            raise ValidationError(f"unknown cut kind {self.kind!r}")
        self.gradient = np.asarray(self.gradient, dtype=float).ravel()
        if not np.all(np.isfinite(self.gradient)):
            raise ValidationError("cut gradient must be finite")
        if self.kind == "objective" and (self.value is None or not math.isfinite(self.value)):
            raise ValidationError("objective cuts need a finite value")


@dataclass
class Ellipsoid:
    """Ellipsoid with center, shape matrix and coordinate scaling."""

    center: np.ndarray
    P: np.ndarray
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = self.center.size
        if self.scale is None:
            self.scale = np.ones(n)
        self.scale = np.asarray(self.scale, dtype=float).ravel()
        if self.P.shape != (n, n) or self.scale.size != n:
            raise ValidationError(f"ellipsoid of dimension {n} has shape {self.P.shape} and scale {self.scale.size}")
        if np.any(self.scale <= 0):
            raise ValidationError("ellipsoid scale must be positive")
        try:
            np.linalg.cholesky(0.5 * (self.P + self.P.T))
        except np.linalg.LinAlgError as e:
            raise ValidationError("ellipsoid shape must be symmetric positive definite") from e

    @property
    def n(self) -> int:
        return self.center.size

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "Ellipsoid":
        center = np.asarray(center, dtype=float)
        return cls(center=center, P=radius ** 2 * np.eye(center.size))

    def width(self, gradient: np.ndarray) -> float:
        """sqrt(g^T P g) for a gradient in original coordinates."""
        g = np.asarray(gradient, dtype=float) * self.scale
        return math.sqrt(max(float(g @ self.P @ g), 0.0))

    def cut(self, gradient: np.ndarray) -> "Ellipsoid":
        """
        Minimum-volume ellipsoid containing {x in E : g^T (x - center) <= 0}.

        Dimension 1 falls back to interval halving.
        """
        g = np.asarray(gradient, dtype=float) * self.scale
        z = self.center / self.scale
        n = self.n
        Pg = self.P @ g
        gPg = float(g @ Pg)
        if not gPg > 0 or not math.isfinite(gPg):
            raise ValidationError("degenerate cut: g^T P g is not positive")
        if n == 1:
            z_new = z - np.sign(g) * math.sqrt(self.P[0, 0]) / 2.0
            P_new = self.P / 4.0
        else:
            step = Pg / math.sqrt(gPg)
            z_new = z - step / (n + 1)
            P_new = (n * n / (n * n - 1.0)) * (self.P - (2.0 / (n + 1)) * np.outer(step, step))
            P_new = 0.5 * (P_new + P_new.T)
        return Ellipsoid(center=z_new * self.scale, P=P_new, scale=self.scale)


@dataclass
class EllipsoidResult:
    """Outcome of :func:`run`."""

    best_point: Optional[np.ndarray]
    best_value: float
    iterations: int
    status: str
    lower_bound: float = -math.inf
    history: List[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.best_point, self.best_value, self.iterations, self.status))


def default_max_iter(n: int, tol: float = DEFAULT_TOL) -> int:
    """10 n^2 iterations per decade of accuracy."""
    return 10 * n * n * max(1, math.ceil(math.log(1.0 / tol)))


@monitor_performance("ellipsoid_run")
def run(oracle: Callable[[np.ndarray], CutOracleResult], initial: Ellipsoid, tol: float = DEFAULT_TOL,
        max_iter: Optional[int] = None) -> EllipsoidResult:
    """
    Minimise a convex function with the central-cut ellipsoid method.

    Args:
        oracle: maps a point to an objective or a feasibility cut
        initial: ellipsoid containing a minimiser
        tol: stop when sqrt(g^T P g) <= tol * (1 + |best value|) on an objective cut
        max_iter: iteration cap (default 10 n^2 ceil(log(1/tol)))

    Returns:
        EllipsoidResult with status converged, iteration-limit, degenerate or infeasible
    """
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    max_iter = max_iter or default_max_iter(initial.n, tol)

    E = initial
    best_point: Optional[np.ndarray] = None
    best_value = math.inf
    lower_bound = -math.inf
    history: List[float] = []
    status = "iteration-limit"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        x = E.center.copy()
        result = oracle(x)
        g = result.gradient

        if result.kind == "objective":
            if result.value < best_value:
                best_value = float(result.value)
                best_point = x
            history.append(best_value)
            if not np.any(g):
                lower_bound = best_value
                status = "converged"
                break
            width = E.width(g)
            lower_bound = max(lower_bound, result.value - width)
            if width <= tol * (1.0 + abs(best_value)):
                status = "converged"
                break
        elif not np.any(g):
            status = "degenerate"
            break

        try:
            E = E.cut(g)
        except ValidationError:
            logger.warning(f"Ellipsoid collapsed after {iterations} iterations")
            status = "degenerate"
            break

        if iterations % 1000 == 0:
            logger.debug(f"Ellipsoid iteration {iterations}: best={best_value:.9g} lower={lower_bound:.9g}")

    if best_point is None and status != "degenerate":
        status = "infeasible"

    metrics.increment_counter("ellipsoid_iterations", iterations)
    metrics.increment_counter(f"ellipsoid_{status.replace('-', '_')}")
    logger.debug(f"Ellipsoid finished: status={status} iterations={iterations} best={best_value:.9g}")
    return EllipsoidResult(best_point=best_point, best_value=best_value, iterations=iterations,
                           status=status, lower_bound=lower_bound, history=history)


# ---------------------------------------------------------
# Initial ellipsoid for the dual problem
# ---------------------------------------------------------

def dual_upper_bounds(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                      allow_local: bool = True) -> np.ndarray:
    """
    Box [0, ub] containing every optimal dual point, in the layout
    ``[lambda_1..lambda_K, mu, rho, theta]``.

    The optimal dual value is at most the computation ceiling U and at least
    each of mu T, rho T P_max and theta L_max; dual feasibility gives
    T eta lambda_i ||h_i||^2 <= rho.
    """
    if cfg.energy_budget <= 0:
        raise ValidationError("the dual box needs a positive energy budget")
    users = stack_profiles(profiles, cfg, allow_local=allow_local)
    omega_max = float(cfg.omega.max())
    U = float((users.q_cap.sum() + cfg.L_max) * omega_max)
    if U <= 0:
        raise ValidationError("the dual box needs a positive computation ceiling")

    rho_ub = U / cfg.energy_budget
    mu_ub = U / cfg.T
    theta_ub = min(omega_max, U / cfg.L_max) if cfg.L_max > 0 else omega_max

    crude = omega_max * cfg.T ** 2 / (3.0 * users.local_coeff * Q_MIN_BITS ** 2)
    gain = cfg.T * cfg.eta * channels.h_norm2
    with np.errstate(divide="ignore"):
        lam_ub = np.where(gain > 0, rho_ub / gain, np.inf)
    lam_ub = np.minimum(lam_ub, crude)
    return np.concatenate([lam_ub, [mu_ub, rho_ub, theta_ub]])


def initial_ellipsoid_for_d1(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                             allow_local: bool = True, inflate: float = 1.0) -> Ellipsoid:
    """
    Ellipsoid containing the dual box with a strictly dual-feasible center.

    The center puts lambda_i = rho_ub / (4 K T eta ||h_i||^2) and
    rho = rho_ub / 2, so tr(sum T eta lambda_i H_i) = rho_ub / 4 < rho.
    In normalised coordinates P = n I.
    """
    ub = dual_upper_bounds(channels, profiles, cfg, allow_local=allow_local)
    K = cfg.K
    rho_ub = ub[K + 1]
    gain = cfg.T * cfg.eta * channels.h_norm2
    with np.errstate(divide="ignore"):
        lam_c = np.where(gain > 0, rho_ub / (4.0 * K * gain), ub[:K] / 2.0)
    lam_c = np.minimum(lam_c, ub[:K] / 2.0)

    center = np.concatenate([lam_c, [ub[K] / 2.0, rho_ub / 2.0, ub[K + 2] / 2.0]])
    half_width = np.maximum(center, ub - center) * inflate
    half_width = np.where(half_width > 0, half_width, 1.0)
    n = center.size
    return Ellipsoid(center=center, P=n * np.eye(n), scale=half_width)


def initial_ellipsoid_box(ub: np.ndarray) -> Ellipsoid:
    """Ellipsoid around the box [0, ub] centred at its midpoint."""
    ub = np.asarray(ub, dtype=float)
    center = ub / 2.0
    half_width = np.where(center > 0, center, 1.0)
    n = center.size
    return Ellipsoid(center=center, P=n * np.eye(n), scale=half_width)
