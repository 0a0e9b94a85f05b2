import json
import logging

import pytest

from wpmec.errors import ValidationError
from wpmec.solvers.observability import (SolverLogger, SolverMetrics, SolverTracer, get_metrics, get_tracer,
                                         monitor_performance)


def test_metrics_snapshot():
    m = SolverMetrics()
    m.increment_counter("cuts")
    m.increment_counter("cuts", 4)
    m.record_timer("solve", 0.5)
    m.record_timer("solve", 1.5)
    m.set_gauge("gap", 1e-4)
    snapshot = m.get_metrics()
    assert snapshot["counters"] == {"cuts": 5}
    assert snapshot["timers"]["solve"] == {"count": 2, "total": 2.0, "avg": 1.0, "max": 1.5}
    assert snapshot["gauges"]["gap"] == 1e-4
    m.reset_metrics()
    assert m.get_metrics() == {"counters": {}, "timers": {}, "gauges": {}}


def test_monitor_performance_counts_success_and_errors():
    @monitor_performance("toy_solve")
    def toy(fail):
        if fail:
            raise ValidationError("bad input")
        return 42

    assert toy(False) == 42
    with pytest.raises(ValidationError):
        toy(True)

    snapshot = get_metrics().get_metrics()
    assert snapshot["counters"]["toy_solve_success"] == 1
    assert snapshot["counters"]["toy_solve_errors"] == 1
    assert snapshot["timers"]["toy_solve"]["count"] == 2
    latest = get_tracer().get_traces(limit=1)[0]
    assert latest["operation"] == "toy_solve"
    assert latest["status"] == "error"
    assert latest["result"]["error_type"] == "ValidationError"


def test_tracer_nests_and_exports(tmp_path):
    tracer = SolverTracer(max_traces=5)
    tracer.start_trace("sweep", points=2)
    tracer.start_trace("trial")
    tracer.add_event("cut", "feasibility cut", index=0)
    tracer.end_trace()
    tracer.add_event("point", "point done")
    tracer.end_trace("completed", rows=2)

    sweep, trial = sorted(tracer.traces, key=lambda t: t["trace_id"])
    assert [e["type"] for e in trial["events"]] == ["cut"]
    assert [e["type"] for e in sweep["events"]] == ["point"]
    assert sweep["result"] == {"rows": 2}

    path = tmp_path / "traces.json"
    tracer.export_traces(str(path))
    assert {t["operation"] for t in json.loads(path.read_text(encoding="utf-8"))} == {"sweep", "trial"}


def test_tracer_keeps_the_latest_traces():
    tracer = SolverTracer(max_traces=3)
    for k in range(5):
        tracer.start_trace(f"op{k}")
        tracer.end_trace()
    assert [t["operation"] for t in tracer.traces] == ["op2", "op3", "op4"]


def test_loggers_share_the_package_handler():
    logger = SolverLogger.get_logger("wpmec.tests")
    assert logger is SolverLogger.get_logger("wpmec.tests")
    assert logging.getLogger("wpmec").handlers


def test_tracer_clear_and_orphan_events():
    tracer = SolverTracer()
    tracer.add_event("gap", "no trace open")
    tracer.end_trace()
    assert tracer.traces == []
    tracer.start_trace("joint_solve", K=2)
    tracer.add_event("dual", "ellipsoid converged", iterations=40)
    tracer.end_trace()
    (trace,) = tracer.get_traces()
    assert trace["metadata"] == {"K": 2}
    assert trace["events"][0]["data"] == {"iterations": 40}
    assert trace["duration"] >= trace["events"][0]["elapsed"] >= 0
    tracer.clear()
    assert tracer.get_traces() == []
