"""
WPMEC: joint energy beamforming and computation offloading for wireless
powered multiuser mobile-edge computing.

- model: system parameters, channels, allocations and the feasibility check
- solvers: dual ellipsoid method, recovery SDP, benchmarks and the oracle
- experiments: seeded Monte-Carlo sweeps and CSV output
- cli: command-line front end
"""

from .errors import WpmecError, ValidationError, ConfigError
from .model import SystemConfig, UserProfile, ChannelSet, Allocation, SolveReport, check_feasibility, uniform_profiles
from .solvers import SchemeId, SolverOptions, solve_joint, solve_scheme, brute_force, kkt_check
from .experiments import ExperimentConfig, SweepSpec, generate_channels, run_sweep, emit_csv, load_experiment_config

__version__ = "0.1.0"

__all__ = [
    'WpmecError',
    'ValidationError',
    'ConfigError',
    'SystemConfig',
    'UserProfile',
    'ChannelSet',
    'Allocation',
    'SolveReport',
    'check_feasibility',
    'uniform_profiles',
    'SchemeId',
    'SolverOptions',
    'solve_joint',
    'solve_scheme',
    'brute_force',
    'kkt_check',
    'ExperimentConfig',
    'SweepSpec',
    'generate_channels',
    'run_sweep',
    'emit_csv',
    'load_experiment_config'
]
