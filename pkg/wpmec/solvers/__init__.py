"""
WPMEC solvers package

Components:
- Lagrange dual of the joint design with closed-form subproblems
- Ellipsoid method for the dual
- Recovery SDP for the energy covariance and offloading times
- Joint design, fixed-covariance solver and benchmark schemes
- Brute-force oracle and KKT certificates
- Observability and monitoring tools
"""

from .dual_solver import DualPoint, DualProblem, evaluate_dual, dual_feasible, dual_subgradient, feasibility_cut
from .ellipsoid import CutOracleResult, Ellipsoid, EllipsoidResult, run
from .recovery import RecoverySdp, SdpResult, solve_recovery_sdp, assemble_solution
from .fixed_q import solve_fixed_q
from .joint import SolverOptions, solve_joint
from .benchmarks import SchemeId, solve_scheme, solve_local_only, solve_offload_only, solve_isotropic
from .oracle import GridSpec, KktCertificate, brute_force, kkt_check
from .observability import SolverLogger, get_metrics, get_tracer

__all__ = [
    'DualPoint',
    'DualProblem',
    'evaluate_dual',
    'dual_feasible',
    'dual_subgradient',
    'feasibility_cut',
    'CutOracleResult',
    'Ellipsoid',
    'EllipsoidResult',
    'run',
    'RecoverySdp',
    'SdpResult',
    'solve_recovery_sdp',
    'assemble_solution',
    'solve_fixed_q',
    'SolverOptions',
    'solve_joint',
    'SchemeId',
    'solve_scheme',
    'solve_local_only',
    'solve_offload_only',
    'solve_isotropic',
    'GridSpec',
    'KktCertificate',
    'brute_force',
    'kkt_check',
    'SolverLogger',
    'get_metrics',
    'get_tracer'
]
