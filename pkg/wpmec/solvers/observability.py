"""
Logging, metrics and phase traces for solver runs.

Modules take their logger from ``SolverLogger.get_logger(__name__)``. The
``wpmec`` package logger gets a console handler at ``WPMEC_LOG_LEVEL`` and,
when ``WPMEC_LOG_DIR`` is set, a detailed ``wpmec.log`` plus an ``errors.log``.
Public solve entry points are wrapped in ``monitor_performance``: the call is
timed into the global ``SolverMetrics`` and opens a trace in the global
``SolverTracer`` that the solve phases (dual, recovery, polish, gap) append
events to. The CLI exports those traces with ``--trace-out``.
"""

import functools
import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

PACKAGE = "wpmec"
SIMPLE_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
DETAILED_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"


def _handler(handler: logging.Handler, level: int, fmt: str) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt))
    return handler


class SolverLogger:
    """Installs the package handlers once and hands out module loggers."""

    _configured = False
    _lock = threading.Lock()

    @classmethod
    def setup_logging(cls):
        """Attach the console handler and, with WPMEC_LOG_DIR, the two file handlers."""
        with cls._lock:
            if cls._configured:
                return
            cls._configured = True

            package_logger = logging.getLogger(PACKAGE)
            package_logger.setLevel(logging.DEBUG)
            if package_logger.handlers:
                return

            console_level = getattr(logging, os.getenv("WPMEC_LOG_LEVEL", "INFO").upper(), logging.INFO)
            package_logger.addHandler(_handler(logging.StreamHandler(), console_level, SIMPLE_FORMAT))

            log_dir = os.getenv("WPMEC_LOG_DIR")
            if log_dir:
                directory = Path(log_dir)
                directory.mkdir(parents=True, exist_ok=True)
                package_logger.addHandler(
                    _handler(logging.FileHandler(directory / "wpmec.log"), logging.DEBUG, DETAILED_FORMAT))
                package_logger.addHandler(
                    _handler(logging.FileHandler(directory / "errors.log"), logging.ERROR, DETAILED_FORMAT))

    @classmethod
    def get_logger(cls, name: str) -> logging.Logger:
        """Logger for a wpmec module; handlers live on the package logger."""
        cls.setup_logging()
        return logging.getLogger(name)


@dataclass
class PhaseTrace:
    """One monitored call and the phase events recorded while it ran."""

    trace_id: int
    operation: str
    metadata: Dict[str, Any]
    started: float
    events: List[Dict[str, Any]] = field(default_factory=list)
    status: str = "running"
    duration: Optional[float] = None
    result: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "operation": self.operation,
            "metadata": dict(self.metadata),
            "status": self.status,
            "duration": self.duration,
            "events": [dict(event) for event in self.events],
            "result": dict(self.result),
        }


class SolverTracer:
    """
    Bounded store of phase traces.

    Traces nest per thread: ``add_event`` and ``end_trace`` act on the
    innermost open trace of the calling thread. Only the newest
    ``max_traces`` traces are kept.
    """

    def __init__(self, max_traces: int = 1000):
        self.max_traces = max_traces
        self._traces: List[PhaseTrace] = []
        self._open = threading.local()
        self._lock = threading.Lock()
        self._next_id = 0

    def _stack(self) -> List[PhaseTrace]:
        if not hasattr(self._open, "stack"):
            self._open.stack = []
        return self._open.stack

    @property
    def traces(self) -> List[Dict[str, Any]]:
        """Stored traces, oldest first."""
        with self._lock:
            return [trace.to_dict() for trace in self._traces]

    def start_trace(self, operation: str, **metadata) -> int:
        with self._lock:
            self._next_id += 1
            trace = PhaseTrace(trace_id=self._next_id, operation=operation, metadata=metadata,
                               started=time.perf_counter())
            self._traces.append(trace)
            del self._traces[:-self.max_traces]
        self._stack().append(trace)
        return trace.trace_id

    def add_event(self, event_type: str, message: str, **data):
        """Record a phase event on the innermost open trace; ignored when none is open."""
        stack = self._stack()
        if not stack:
            return
        trace = stack[-1]
        with self._lock:
            trace.events.append({"type": event_type, "message": message,
                                 "elapsed": time.perf_counter() - trace.started, "data": data})

    def end_trace(self, status: str = "completed", **result):
        stack = self._stack()
        if not stack:
            return
        trace = stack.pop()
        with self._lock:
            trace.duration = time.perf_counter() - trace.started
            trace.status = status
            trace.result = result

    def get_traces(self, limit: Optional[int] = None) -> List[Dict[str, Any]]:
        """Newest first."""
        newest = self.traces[::-1]
        return newest[:limit] if limit else newest

    def export_traces(self, filepath: str):
        """Write the stored traces, oldest first, as a JSON list."""
        with open(filepath, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.traces, f, indent=2, default=float)
            f.write("\n")

    def clear(self):
        with self._lock:
            self._traces.clear()


@dataclass
class _TimerStat:
    count: int = 0
    total: float = 0.0
    longest: float = 0.0


class SolverMetrics:
    """Counters, timers and gauges shared by every solver component."""

    def __init__(self):
        self._counters: Counter = Counter()
        self._timers: Dict[str, _TimerStat] = {}
        self._gauges: Dict[str, float] = {}
        self._lock = threading.Lock()

    def increment_counter(self, name: str, value: int = 1):
        with self._lock:
            self._counters[name] += value

    def record_timer(self, name: str, duration: float):
        with self._lock:
            stat = self._timers.setdefault(name, _TimerStat())
            stat.count += 1
            stat.total += duration
            stat.longest = max(stat.longest, duration)

    def set_gauge(self, name: str, value: float):
        with self._lock:
            self._gauges[name] = value

    def get_metrics(self) -> Dict[str, Any]:
        """Snapshot: counters, per-timer count/total/avg/max, gauges."""
        with self._lock:
            return {
                "counters": dict(self._counters),
                "timers": {name: {"count": s.count, "total": s.total, "avg": s.total / s.count, "max": s.longest}
                           for name, s in self._timers.items()},
                "gauges": dict(self._gauges),
            }

    def reset_metrics(self):
        with self._lock:
            self._counters.clear()
            self._timers.clear()
            self._gauges.clear()


class PerformanceMonitor:
    """
    Context manager around one solver phase: opens a trace, records the
    elapsed time and a ``<operation>_success`` or ``<operation>_errors`` count.
    """

    def __init__(self, operation_name: str, metrics: "SolverMetrics", tracer: SolverTracer):
        self.operation_name = operation_name
        self.metrics = metrics
        self.tracer = tracer
        self._started = 0.0

    def __enter__(self):
        self._started = time.perf_counter()
        self.tracer.start_trace(self.operation_name)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.metrics.record_timer(self.operation_name, time.perf_counter() - self._started)
        if exc_type is None:
            self.tracer.end_trace("completed")
            self.metrics.increment_counter(f"{self.operation_name}_success")
        else:
            self.tracer.end_trace("error", error_type=exc_type.__name__, error_message=str(exc_val))
            self.metrics.increment_counter(f"{self.operation_name}_errors")
        return False


_tracer = SolverTracer()
_metrics = SolverMetrics()


def get_tracer() -> SolverTracer:
    return _tracer


def get_metrics() -> SolverMetrics:
    return _metrics


def monitor_performance(operation_name: str):
    """Run the decorated solver entry point inside a :class:`PerformanceMonitor`."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with PerformanceMonitor(operation_name, _metrics, _tracer):
                return func(*args, **kwargs)
        return wrapper
    return decorator
