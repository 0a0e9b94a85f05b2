"""
Monte-Carlo experiments: seeded Rayleigh channels, parameter sweeps over the
transmit power or the number of users, CSV output, and the INI config loader.

Trial ``i`` of a sweep draws its channels from a Philox stream keyed by
``(seed, i)``, so results do not depend on execution order or on the number
of worker processes (``WPMEC_THREADS``, 0 = one per CPU).
"""

import configparser
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InternalInconsistencyError, ValidationError, WpmecError
from .model import (DEFAULT_C, DEFAULT_F_MAX, DEFAULT_P_C, DEFAULT_PATH_LOSS, DEFAULT_ZETA, ChannelSet, SystemConfig,
                    UserProfile, computation_ceiling)
from .solvers.benchmarks import SchemeId, solve_scheme
from .solvers.joint import SolverOptions
from .solvers.observability import SolverLogger, get_metrics, monitor_performance

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()

SWEEP_VARIABLES = ("P_max_dbm", "K")
DEFAULT_TRIALS = 50
FULL_TRIALS = 500
CSV_HEADER = ["sweep_var", "sweep_value", "scheme", "mean_bits_per_user", "stderr", "trials_ok", "trials_failed"]
ALL_SCHEMES = tuple(SchemeId)
DEFAULT_SWEEP_VALUES = {
    "P_max_dbm": tuple(float(x) for x in range(20, 61, 5)),
    "K": tuple(float(k) for k in range(2, 15, 2)),
}


def dbm_to_watts(x: float) -> float:
    """10^((x - 30) / 10)."""
    if not math.isfinite(x):
        raise ValidationError(f"power in dBm must be finite, got {x}")
    return 10.0 ** ((x - 30.0) / 10.0)


def generate_channels(seed: int, trial_index: int, cfg: SystemConfig,
                      path_loss: float = DEFAULT_PATH_LOSS) -> ChannelSet:
    """
    Rayleigh-fading downlink and uplink channels for one trial.

    Entries are circularly-symmetric complex Gaussian with variance
    ``path_loss``. The stream is Philox keyed by (seed, trial_index); h is
    drawn before g, real parts before imaginary parts.
    """
    if seed < 0 or trial_index < 0:
        raise ValidationError(f"seed and trial index must be non-negative, got {seed}, {trial_index}")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, trial_index], dtype=np.uint64)))
    shape = (cfg.K, cfg.N)
    std = math.sqrt(path_loss / 2.0)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * std
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * std
    return ChannelSet(h, g)


# ---------------------------------------------------------
# Configuration
# ---------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Sweep axis, trial count, seed and schemes of one experiment."""

    variable: str
    values: Tuple[float, ...]
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    schemes: Tuple[SchemeId, ...] = ALL_SCHEMES
    full_trials: int = FULL_TRIALS

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValidationError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValidationError("sweep values must not be empty")
        if list(values) != sorted(values):
            raise ValidationError(f"sweep values must be sorted, got {list(values)}")
        if self.variable == "K" and any(v < 1 or int(v) != v for v in values):
            raise ValidationError(f"K values must be positive integers, got {list(values)}")
        if self.trials < 1 or self.full_trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schemes", tuple(SchemeId.parse(s) for s in self.schemes))


@dataclass(frozen=True)
class ExperimentConfig:
    """Base system, user profiles (one shared or one per user), solver options and an optional sweep."""

    system: SystemConfig
    profiles: Tuple[UserProfile, ...] = (UserProfile.reference_defaults(),)
    sweep: Optional[SweepSpec] = None
    options: SolverOptions = field(default_factory=SolverOptions)
    path_loss: float = DEFAULT_PATH_LOSS

    def __post_init__(self):
        if not self.profiles:
            raise ValidationError("at least one user profile is required")
        if not (self.path_loss > 0 and math.isfinite(self.path_loss)):
            raise ValidationError(f"path_loss must be positive and finite, got {self.path_loss}")
        if len(self.profiles) not in (1, self.system.K):
            raise ValidationError(f"expected 1 or {self.system.K} user profiles, got {len(self.profiles)}")
        if self.sweep is not None and self.sweep.variable == "K" and len(self.profiles) != 1:
            raise ValidationError("a K sweep needs a single user profile shared by every user")

    def profiles_for(self, K: int) -> List[UserProfile]:
        if len(self.profiles) == 1:
            return [self.profiles[0]] * K
        return list(self.profiles)

    def system_at(self, value: float) -> SystemConfig:
        """The base system with the sweep variable set to ``value``."""
        if self.sweep is None or self.sweep.variable == "P_max_dbm":
            return replace(self.system, P_max=dbm_to_watts(value))
        return replace(self.system, K=int(value), weights=None)


# ---------------------------------------------------------
# Sweeps
# ---------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    sweep_var: str
    sweep_value: float
    scheme: str
    mean_bits_per_user: float
    stderr: float
    trials_ok: int
    trials_failed: int

    @property
    def flagged(self) -> bool:
        """True when every trial at this point failed."""
        return self.trials_ok == 0


@dataclass
class SweepResult:
    """
    Aggregated sweep.

    ``trial_values[(value, scheme)]`` keeps the per-trial weighted bits
    (``None`` for a failed trial) in trial order.
    """

    sweep_var: str
    rows: List[SweepRow] = field(default_factory=list)
    trial_values: Dict[Tuple[float, str], List[Optional[float]]] = field(default_factory=dict)

    @property
    def flagged_points(self) -> List[Tuple[float, str]]:
        return [(row.sweep_value, row.scheme) for row in self.rows if row.flagged]

    def sorted_rows(self) -> List[SweepRow]:
        return sorted(self.rows, key=lambda row: (row.sweep_value, row.scheme))


def resolve_workers(threads: Optional[int] = None) -> int:
    """Worker count from ``threads`` or ``WPMEC_THREADS``; 0 means one per CPU."""
    if threads is None:
        raw = os.getenv("WPMEC_THREADS", "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError:
            raise ValidationError(f"WPMEC_THREADS must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValidationError(f"worker count must be >= 0, got {threads}")
    return threads or os.cpu_count() or 1


def _solve_trial(task: Tuple[ExperimentConfig, float, int]) -> Dict[str, Optional[float]]:
    """Weighted bits of every requested scheme on one channel draw (``None`` on failure)."""
    ec, value, trial = task
    cfg = ec.system_at(value)
    profiles = ec.profiles_for(cfg.K)
    channels = generate_channels(ec.sweep.seed, trial, cfg, ec.path_loss)
    out: Dict[str, Optional[float]] = {}
    for scheme in ec.sweep.schemes:
        try:
            _, report = solve_scheme(scheme, channels, profiles, cfg, options=ec.options)
        except WpmecError as exc:
            logger.warning(f"Trial {trial} at {ec.sweep.variable}={value:g} failed for {scheme.value}: {exc}")
            out[scheme.value] = None
            continue
        out[scheme.value] = report.primal_objective if report.converged else None
    return out


def _aggregate(values: Sequence[Optional[float]]) -> Tuple[float, float, int, int]:
    ok = np.array([v for v in values if v is not None], dtype=float)
    failed = len(values) - ok.size
    if ok.size == 0:
        return float("nan"), float("nan"), 0, failed
    mean = math.fsum(ok) / ok.size
    stderr = float(np.std(ok, ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else 0.0
    return mean, stderr, int(ok.size), failed


@monitor_performance("run_sweep")
def run_sweep(ec: ExperimentConfig, threads: Optional[int] = None) -> SweepResult:
    """
    Solve every scheme on every (sweep point, trial) and aggregate per point.

    Failed or non-converged trials are left out of the means and counted;
    a point where every trial failed is flagged and the sweep continues.
    """
    if ec.sweep is None:
        raise ValidationError("the experiment config has no [sweep] section")
    sweep = ec.sweep
    tasks = [(ec, value, trial) for value in sweep.values for trial in range(sweep.trials)]
    workers = min(resolve_workers(threads), len(tasks))
    logger.info(f"Sweep over {sweep.variable}: {len(sweep.values)} points x {sweep.trials} trials, "
                f"{len(sweep.schemes)} schemes, {workers} workers")

    if workers <= 1:
        outcomes = [_solve_trial(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_solve_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))

    result = SweepResult(sweep_var=sweep.variable)
    for k, value in enumerate(sweep.values):
        chunk = outcomes[k * sweep.trials:(k + 1) * sweep.trials]
        cfg = ec.system_at(value)
        ceiling = computation_ceiling(cfg, ec.profiles_for(cfg.K))
        for scheme in sweep.schemes:
            per_trial = [trial[scheme.value] for trial in chunk]
            result.trial_values[(value, scheme.value)] = per_trial
            mean, stderr, ok, failed = _aggregate(per_trial)
            if ok and mean > ceiling * (1.0 + 1e-9):
                raise InternalInconsistencyError(
                    f"{scheme.value} mean {mean:.6g} at {sweep.variable}={value:g} exceeds the ceiling {ceiling:.6g}")
            if ok == 0:
                logger.warning(f"All {failed} trials failed for {scheme.value} at {sweep.variable}={value:g}")
            metrics.increment_counter("sweep_trials_ok", ok)
            metrics.increment_counter("sweep_trials_failed", failed)
            result.rows.append(SweepRow(sweep.variable, value, scheme.value, mean, stderr, ok, failed))
    return result


def _fmt(x: float) -> str:
    return "%.15g" % x


def emit_csv(result: SweepResult, path: str) -> str:
    """Write the sweep as CSV (UTF-8, LF line endings, rows sorted by value then scheme)."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in result.sorted_rows():
                writer.writerow([row.sweep_var, _fmt(row.sweep_value), row.scheme, _fmt(row.mean_bits_per_user),
                                 _fmt(row.stderr), row.trials_ok, row.trials_failed])
    except OSError as exc:
        raise WpmecError(f"cannot write {path}: {exc}") from exc
    logger.info(f"Wrote {len(result.rows)} rows to {path}")
    return path


# ---------------------------------------------------------
# INI loader
# ---------------------------------------------------------

SYSTEM_KEYS = {"N", "K", "T", "P_max", "B", "sigma2", "eta", "Gamma", "L_max", "weights"}
USER_KEYS = {"C", "zeta", "f_max", "p_c", "path_loss"}
SWEEP_KEYS = {"variable", "values", "trials", "seed", "schemes", "full_trials"}
SOLVER_KEYS = {"tol", "max_iter", "gap_tol", "sdp_tol", "sdp_max_iter", "fixed_q_tol", "polish", "isotropic_search"}
SECTIONS = {"system": SYSTEM_KEYS, "users": USER_KEYS, "sweep": SWEEP_KEYS, "solver": SOLVER_KEYS}


class _IniFile:
    """configparser view of a config file that remembers where each key was written."""

    def __init__(self, path: str):
        self.path = path
        try:
            with open(path, encoding="utf-8") as f:
                self.lines = f.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", path) from exc
        self.parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        self.parser.optionxform = str
        try:
            self.parser.read_string("\n".join(self.lines), source=path)
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", path, exc.lineno) from exc
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", path, exc.lineno) from exc
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("key outside of any section", path, exc.lineno) from exc
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else None
            raise ConfigError("malformed line", path, line) from exc

    def line_of(self, section: str, key: Optional[str] = None) -> Optional[int]:
        current = None
        for number, raw in enumerate(self.lines, start=1):
            text = raw.strip()
            if text.startswith("[") and text.endswith("]"):
                current = text[1:-1].strip()
                if key is None and current == section:
                    return number
            elif current == section and key is not None:
                name = text.split("=", 1)[0].split(":", 1)[0].strip()
                if name == key:
                    return number
        return None

    def check_keys(self):
        for section in self.parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", self.path, self.line_of(section))
            for key in self.parser[section]:
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", self.path, self.line_of(section, key))

    def get(self, section: str, key: str, convert, default=None):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            return convert(raw)
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"bad value for {key!r} in [{section}]: {raw!r} ({exc})", self.path,
                              self.line_of(section, key)) from exc


def _float_list(raw: str) -> List[float]:
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if not items:
        raise ValueError("empty list")
    return [float(item) for item in items]


def _name_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _boolean(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _user_profiles(ini: _IniFile, K: int) -> Tuple[UserProfile, ...]:
    defaults = {"C": DEFAULT_C, "zeta": DEFAULT_ZETA, "f_max": DEFAULT_F_MAX, "p_c": DEFAULT_P_C}
    columns = {key: ini.get("users", key, _float_list, [value]) for key, value in defaults.items()}
    lengths = {len(v) for v in columns.values()} - {1}
    if len(lengths) > 1 or (lengths and lengths != {K}):
        raise ConfigError(f"[users] lists must hold 1 or K = {K} values", ini.path, ini.line_of("users"))
    count = lengths.pop() if lengths else 1
    try:
        return tuple(UserProfile(**{key: (v[i] if len(v) > 1 else v[0]) for key, v in columns.items()})
                     for i in range(count))
    except ValidationError as exc:
        raise ConfigError(str(exc), ini.path, ini.line_of("users")) from exc


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Read an INI config with sections [system], [users], [sweep] and [solver].

    Missing keys take the reference simulation defaults; P_max in [system] is
    in watts, sweep values for P_max_dbm are in dBm.
    """
    ini = _IniFile(path)
    ini.check_keys()
    base = SystemConfig.reference_defaults()
    values = {key: ini.get("system", key, float, getattr(base, key))
              for key in ("T", "P_max", "B", "sigma2", "eta", "Gamma", "L_max")}
    N = ini.get("system", "N", int, base.N)
    K = ini.get("system", "K", int, base.K)
    weights = ini.get("system", "weights", _float_list, None)
    try:
        system = SystemConfig(N=N, K=K, weights=weights, **values)
    except ValidationError as exc:
        raise ConfigError(str(exc), path, ini.line_of("system")) from exc
    profiles = _user_profiles(ini, K)
    path_loss = ini.get("users", "path_loss", float, DEFAULT_PATH_LOSS)

    defaults = SolverOptions()
    options = SolverOptions(
        tol=ini.get("solver", "tol", float, defaults.tol),
        max_iter=ini.get("solver", "max_iter", int, defaults.max_iter),
        gap_tol=ini.get("solver", "gap_tol", float, defaults.gap_tol),
        sdp_tol=ini.get("solver", "sdp_tol", float, defaults.sdp_tol),
        sdp_max_iter=ini.get("solver", "sdp_max_iter", int, defaults.sdp_max_iter),
        fixed_q_tol=ini.get("solver", "fixed_q_tol", float, defaults.fixed_q_tol),
        polish=ini.get("solver", "polish", _boolean, defaults.polish),
        isotropic_search=ini.get("solver", "isotropic_search", _boolean, defaults.isotropic_search),
    )

    sweep = None
    if ini.parser.has_section("sweep"):
        try:
            sweep = SweepSpec(
                variable=ini.get("sweep", "variable", str, "P_max_dbm").strip(),
                values=tuple(ini.get("sweep", "values", _float_list, [])),
                trials=ini.get("sweep", "trials", int, DEFAULT_TRIALS),
                seed=ini.get("sweep", "seed", int, 0),
                schemes=tuple(ini.get("sweep", "schemes", _name_list, [s.value for s in ALL_SCHEMES])),
                full_trials=ini.get("sweep", "full_trials", int, FULL_TRIALS),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc), path, ini.line_of("sweep")) from exc

    try:
        return ExperimentConfig(system=system, profiles=profiles, sweep=sweep, options=options, path_loss=path_loss)
    except ValidationError as exc:
        raise ConfigError(str(exc), path) from exc
