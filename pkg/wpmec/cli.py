#!/usr/bin/env python3
"""
WPMEC command-line interface.

Commands:
    solve        solve one instance and write a JSON result document
    sweep-power  Monte-Carlo sweep over P_max (dBm), CSV output
    sweep-users  Monte-Carlo sweep over the number of users K, CSV output
    validate     compare the joint design against the brute-force oracle
    certify      solve with the joint design and print its KKT certificate

solve and certify take ``--trace-out PATH`` to dump the phase traces
(dual, recovery, polish, gap) of every monitored solver call as JSON.

Exit codes: 0 success, 1 input error, 2 non-convergence.
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from .errors import ConfigError, WpmecError
from .experiments import (DEFAULT_SWEEP_VALUES, ExperimentConfig, SweepSpec, emit_csv, generate_channels,
                          load_experiment_config, run_sweep)
from .model import ChannelSet, SystemConfig, uniform_profiles
from .solvers.benchmarks import SchemeId, solve_scheme
from .solvers.dual_solver import DualPoint
from .solvers.joint import solve_joint
from .solvers.observability import SolverLogger, get_metrics, get_tracer
from .solvers.oracle import brute_force, kkt_check

logger = SolverLogger.get_logger(__name__)
metrics = get_metrics()
tracer = get_tracer()

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2
VALIDATE_TOL = 0.01
CERTIFY_TOL = 1e-4


# ---------------------------------------------------------
# Input files
# ---------------------------------------------------------

def _parse_complex(token: str, path: str, line: int) -> complex:
    parts = token.split(",")
    if len(parts) != 2:
        raise ConfigError(f"expected a 're,im' pair, got {token!r}", path, line)
    try:
        value = complex(float(parts[0]), float(parts[1]))
    except ValueError:
        raise ConfigError(f"non-numeric channel entry {token!r}", path, line) from None
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ConfigError(f"non-finite channel entry {token!r}", path, line)
    return value


def parse_channels_file(path: str, cfg: SystemConfig) -> ChannelSet:
    """
    One user per line: N ``re,im`` tokens for h_i, optionally followed by N
    more for g_i (g_i = h_i when omitted). Blank lines and ``#`` comments are
    skipped.
    """
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read channels: {exc}", path) from exc

    h_rows, g_rows = [], []
    for number, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        values = [_parse_complex(token, path, number) for token in text.split()]
        if len(values) == cfg.N:
            h_rows.append(values)
            g_rows.append(values)
        elif len(values) == 2 * cfg.N:
            h_rows.append(values[:cfg.N])
            g_rows.append(values[cfg.N:])
        else:
            raise ConfigError(f"expected {cfg.N} or {2 * cfg.N} entries, got {len(values)}", path, number)
    if len(h_rows) != cfg.K:
        raise ConfigError(f"expected {cfg.K} users, got {len(h_rows)}", path)
    return ChannelSet(np.array(h_rows), np.array(g_rows))


def _load_instance(args) -> tuple:
    ec = load_experiment_config(args.config)
    cfg = ec.system
    if args.channels:
        channels = parse_channels_file(args.channels, cfg)
    else:
        channels = generate_channels(args.seed, 0, cfg, ec.path_loss)
    return ec, cfg, ec.profiles_for(cfg.K), channels


def _write_json(document: dict, path: str):
    text = json.dumps(document, indent=2) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as exc:
        raise WpmecError(f"cannot write {path}: {exc}") from exc


def _export_traces(path: str):
    try:
        tracer.export_traces(path)
    except OSError as exc:
        raise WpmecError(f"cannot write {path}: {exc}") from exc
    print(f"📝 Wrote {len(tracer.traces)} traces to {path}")


def _diagnostics() -> dict:
    # timers are left out so identical runs give identical documents
    snapshot = metrics.get_metrics()
    return {"counters": snapshot["counters"], "gauges": snapshot["gauges"]}


# ---------------------------------------------------------
# Commands
# ---------------------------------------------------------

def cmd_solve(args) -> int:
    ec, cfg, profiles, channels = _load_instance(args)
    scheme = SchemeId.parse(args.scheme)
    print(f"🚀 Solving {scheme.value} for K={cfg.K}, N={cfg.N}, P_max={cfg.P_max:g} W")
    alloc, report = solve_scheme(scheme, channels, profiles, cfg, options=ec.options)
    document = {
        "command": "solve",
        "scheme": scheme.value,
        "config": cfg.to_dict(),
        "profiles": [p.to_dict() for p in profiles],
        "options": ec.options.to_dict(),
        "channels": channels.to_dict(),
        "allocation": alloc.to_dict(channels, profiles, cfg),
        "report": report.to_dict(),
        "diagnostics": _diagnostics(),
    }
    _write_json(document, args.out)
    gap = "n/a" if report.relative_gap is None else f"{report.relative_gap:.3e}"
    print(f"📝 objective {report.primal_objective:.9g} bits, gap {gap}, status {report.status}")
    if not report.converged:
        print("❌ Solver did not converge")
        return EXIT_NONCONVERGED
    print("✅ Done")
    return EXIT_OK


def _sweep_spec(ec: ExperimentConfig, variable: str, args) -> SweepSpec:
    base = ec.sweep
    if base is None:
        spec = SweepSpec(variable=variable, values=DEFAULT_SWEEP_VALUES[variable])
    elif base.variable != variable:
        spec = replace(base, variable=variable, values=DEFAULT_SWEEP_VALUES[variable])
    else:
        spec = base
    if args.full:
        spec = replace(spec, trials=spec.full_trials)
    if args.trials is not None:
        spec = replace(spec, trials=args.trials)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


def cmd_sweep(args, variable: str) -> int:
    ec = load_experiment_config(args.config)
    ec = replace(ec, sweep=_sweep_spec(ec, variable, args))
    print(f"🚀 Sweeping {variable} over {list(ec.sweep.values)} with {ec.sweep.trials} trials")
    result = run_sweep(ec, threads=args.threads)
    emit_csv(result, args.out)
    print(f"📝 Wrote {args.out}")
    if result.flagged_points:
        print(f"❌ No converged trial at {result.flagged_points}")
        return EXIT_NONCONVERGED
    print("✅ Done")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.cases < 1:
        print("❌ --cases must be at least 1")
        return EXIT_INPUT
    print(f"🔎 Comparing the joint design with brute force on {args.cases} instances (seed {args.seed})")
    print(f"{'case':>4} {'K':>2} {'oracle':>14} {'joint':>14} {'deviation':>10}")
    worst = 0.0
    for case in range(args.cases):
        K = 1 + case % 2
        cfg = SystemConfig.reference_defaults(K=K, N=1)
        profiles = uniform_profiles(K)
        channels = generate_channels(args.seed, case, cfg)
        _, oracle_value = brute_force(channels, profiles, cfg)
        _, report = solve_joint(channels, profiles, cfg)
        deviation = abs(report.primal_objective - oracle_value) / max(oracle_value, 1e-300)
        worst = max(worst, deviation)
        print(f"{case:>4} {K:>2} {oracle_value:>14.6f} {report.primal_objective:>14.6f} {deviation:>10.2e}")
    print(f"📝 max relative deviation {worst:.3e}")
    if worst > VALIDATE_TOL:
        print(f"❌ Deviation above {VALIDATE_TOL:.0%}")
        return EXIT_NONCONVERGED
    print("✅ All instances within tolerance")
    return EXIT_OK


def cmd_certify(args) -> int:
    ec, cfg, profiles, channels = _load_instance(args)
    alloc, report = solve_joint(channels, profiles, cfg, options=ec.options)
    if report.dual_point is None:
        print("❌ No dual point to certify")
        return EXIT_NONCONVERGED
    certificate = kkt_check(alloc, DualPoint.from_vector(np.array(report.dual_point)), channels, profiles, cfg,
                            tol=CERTIFY_TOL)
    print(f"📝 dual {certificate.dual_value:.9g}, primal {certificate.primal_objective:.9g}")
    for name, value in certificate.terms.items():
        print(f"   {name:<22} {value:.3e}")
    print(f"   {'primal_violation':<22} {certificate.primal_violation:.3e}")
    for message in certificate.violations:
        print(f"   ⚠️  {message}")
    if args.out:
        _write_json({"command": "certify", "report": report.to_dict(), "certificate": certificate.to_dict()},
                    args.out)
    if not certificate.passed:
        print(f"❌ Max violation {certificate.max_violation:.3e} above {CERTIFY_TOL:g}")
        return EXIT_NONCONVERGED
    print("✅ Certificate holds")
    return EXIT_OK


# ---------------------------------------------------------
# Entry point
# ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpmec", description="Wireless powered MEC resource allocation")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("solve", "certify"):
        p = sub.add_parser(name)
        p.add_argument("config", help="INI config file")
        source = p.add_mutually_exclusive_group()
        source.add_argument("--channels", help="channels file (one user per line, re,im tokens)")
        source.add_argument("--seed", type=int, default=0, help="channel seed when no file is given")
        p.add_argument("--out", required=(name == "solve"), help="output JSON path")
        p.add_argument("--trace-out", help="write the solver phase traces as JSON")
        if name == "solve":
            p.add_argument("--scheme", default=SchemeId.JOINT.value, choices=[s.value for s in SchemeId])

    for name in ("sweep-power", "sweep-users"):
        p = sub.add_parser(name)
        p.add_argument("config", help="INI config file")
        p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--seed", type=int, help="override the sweep seed")
        p.add_argument("--full", action="store_true", help="use the full trial count")
        p.add_argument("--threads", type=int, help="worker processes (default WPMEC_THREADS, 0 = auto)")

    p = sub.add_parser("validate")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--cases", type=int, default=20)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT

    # diagnostics and traces describe this invocation only
    metrics.reset_metrics()
    tracer.clear()
    try:
        if args.command == "solve":
            code = cmd_solve(args)
        elif args.command == "sweep-power":
            code = cmd_sweep(args, "P_max_dbm")
        elif args.command == "sweep-users":
            code = cmd_sweep(args, "K")
        elif args.command == "validate":
            code = cmd_validate(args)
        else:
            code = cmd_certify(args)
        if getattr(args, "trace_out", None):
            _export_traces(args.trace_out)
        return code
    except WpmecError as exc:
        logger.error(f"{args.command} failed: {exc}")
        metrics.increment_counter("cli_errors")
        print(f"❌ Error: {exc}")
        return EXIT_INPUT
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
