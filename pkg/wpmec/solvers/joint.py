"""
Joint energy-beamforming, offloading and local-computing design.

Pipeline: ellipsoid method on the dual problem, closed-form recovery of local
bits and rates, recovery SDP for the covariance and the offloading times,
then a fixed-covariance polish that keeps the better of the two allocations.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..model import Allocation, ChannelSet, SolveReport, SystemConfig, UserProfile, build_report, stack_profiles
from .dual_solver import DualPoint, DualProblem
from .ellipsoid import DEFAULT_TOL, initial_ellipsoid_for_d1, run
from .fixed_q import FIXED_Q_TOL, solve_fixed_q
from .observability import SolverLogger, get_metrics, get_tracer, monitor_performance
from .recovery import SDP_MAX_ITER, SDP_TOL, assemble_solution, recover_allocation

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()
tracer = get_tracer()


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration caps of the joint design and its benchmarks."""

    tol: float = DEFAULT_TOL
    max_iter: Optional[int] = None
    gap_tol: float = 1e-3
    sdp_tol: float = SDP_TOL
    sdp_max_iter: int = SDP_MAX_ITER
    fixed_q_tol: float = FIXED_Q_TOL
    polish: bool = True
    isotropic_search: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _trivial_solution(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                      scheme: str, reason: str) -> Tuple[Allocation, SolveReport]:
    alloc = Allocation.zeros(cfg)
    report = build_report(alloc, channels, profiles, cfg, dual_bound=0.0, iterations=0,
                          status="converged", scheme=scheme, notes=[reason])
    return alloc, report


@monitor_performance("joint_solve")
def solve_joint(channels: ChannelSet, profiles: Sequence[UserProfile], cfg: SystemConfig,
                options: Optional[SolverOptions] = None, allow_local: bool = True,
                scheme: str = "joint") -> Tuple[Allocation, SolveReport]:
    """
    Solve the joint design through its dual.

    Args:
        channels: channel realisation
        profiles: per-user computation profiles
        cfg: system configuration
        options: solver tolerances
        allow_local: False forces every user to offload only
        scheme: label stored in the report

    Returns:
        (allocation, report); the report's dual bound certifies the optimum
    """
    options = options or SolverOptions()
    channels.check_against(cfg)
    users = stack_profiles(profiles, cfg, allow_local=allow_local)
    ceiling = float((users.q_cap.sum() + cfg.L_max) * cfg.omega.max())
    if cfg.energy_budget <= 0:
        return _trivial_solution(channels, profiles, cfg, scheme, "no transmit power")
    if ceiling <= 0:
        return _trivial_solution(channels, profiles, cfg, scheme, "no computation capacity")

    problem = DualProblem(channels, profiles, cfg, allow_local=allow_local)
    initial = initial_ellipsoid_for_d1(channels, profiles, cfg, allow_local=allow_local)
    result = run(problem.oracle, initial, tol=options.tol, max_iter=options.max_iter)
    tracer.add_event("dual", f"ellipsoid {result.status} after {result.iterations} iterations",
                     iterations=result.iterations, best_value=result.best_value)
    if result.best_point is None:
        logger.warning(f"Dual solve found no feasible center ({result.status}); returning zero allocation")
        alloc = Allocation.zeros(cfg)
        report = build_report(alloc, channels, profiles, cfg, dual_bound=None, iterations=result.iterations,
                              status=result.status, scheme=scheme)
        return alloc, report

    dp = DualPoint.from_vector(result.best_point)
    dual_bound = result.best_value
    q, r, t, sdp = recover_allocation(dp, channels, profiles, cfg, allow_local=allow_local,
                                      tol=options.sdp_tol, max_iter=options.sdp_max_iter)
    notes = [f"recovery sdp: {sdp.status} after {sdp.iterations} iterations"]
    tracer.add_event("recovery", notes[0], relaxed_users=list(sdp.relaxed_users))
    if sdp.relaxed_users:
        notes.append(f"local bits reduced to the harvested energy for users {sdp.relaxed_users}")

    Q, ell = sdp.Q, r * t
    primal = float(np.dot(cfg.omega, q + ell))
    if options.polish:
        polished, _ = solve_fixed_q(Q, channels, profiles, cfg, allow_local=allow_local, tol=options.fixed_q_tol)
        polished_value = float(np.dot(cfg.omega, polished.q + polished.ell))
        if polished_value > primal:
            notes.append(f"fixed-covariance polish improved the objective by {polished_value - primal:.6g}")
            tracer.add_event("polish", notes[-1], before=primal, after=polished_value)
            q, r, t, primal = polished.q, polished.rates, polished.t, polished_value

    # converged means certified: the recovered allocation is within gap_tol of the dual bound
    gap = SolveReport.gap(dual_bound, primal)
    if gap is not None and gap <= options.gap_tol:
        status = "converged"
    elif result.status == "converged":
        status = "gap-exceeded"
    else:
        status = result.status
    if status != "converged":
        notes.append(f"relative duality gap {gap:.3e} above {options.gap_tol:g}")
        logger.info(f"Joint solve ({scheme}) ended with status {status}, relative gap {gap:.3e}")
    tracer.add_event("gap", f"relative gap {gap:.3e}", status=status, primal=primal, dual=dual_bound)

    metrics.increment_counter(f"joint_solves_{status.replace('-', '_')}")
    metrics.set_gauge("last_relative_gap", gap if gap is not None else float("nan"))
    logger.debug(f"Joint solve ({scheme}): primal={primal:.9g} dual={dual_bound:.9g} iterations={result.iterations}")
    return assemble_solution(q, r, Q, t, channels, profiles, cfg, dual_bound=dual_bound,
                             iterations=result.iterations, status=status, scheme=scheme,
                             dual_point=dp.to_list(), notes=notes)
