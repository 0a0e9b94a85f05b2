import json

import numpy as np
import pytest

from wpmec.cli import EXIT_INPUT, EXIT_NONCONVERGED, EXIT_OK, main, parse_channels_file
from wpmec.errors import ConfigError
from wpmec.model import SystemConfig

SMALL_CONFIG = """\
[system]
N = 2
K = 2
P_max = {P_max}

[users]
path_loss = 5e-6
"""


@pytest.fixture
def small_config(tmp_path):
    def _write(P_max="10.0", extra=""):
        path = tmp_path / "small.ini"
        path.write_text(SMALL_CONFIG.format(P_max=P_max) + extra, encoding="utf-8")
        return str(path)

    return _write


def test_solve_writes_result(small_config, tmp_path, capsys):
    out = tmp_path / "result.json"
    assert main(["solve", small_config(), "--seed", "1", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["command"] == "solve" and doc["scheme"] == "joint"
    assert doc["report"]["status"] == "converged"
    assert doc["report"]["relative_gap"] <= 1e-3
    assert len(doc["allocation"]["t"]) == 2
    assert "timers" not in doc["diagnostics"]
    assert "✅" in capsys.readouterr().out


def test_solve_is_deterministic(small_config, tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    config = small_config()
    assert main(["solve", config, "--seed", "2", "--out", str(first), "--scheme", "isotropic"]) == EXIT_OK
    assert main(["solve", config, "--seed", "2", "--out", str(second), "--scheme", "isotropic"]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()


def test_local_only_scheme_offloads_nothing(small_config, tmp_path):
    out = tmp_path / "local.json"
    assert main(["solve", small_config(), "--scheme", "local-only", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["allocation"]["ell"] == [0.0, 0.0]


def test_negative_power_is_an_input_error(small_config, tmp_path, capsys):
    code = main(["solve", small_config(P_max="-1"), "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    assert "P_max" in capsys.readouterr().out
    assert not (tmp_path / "x.json").exists()


def test_solve_from_channels_file(small_config, tmp_path):
    channels = tmp_path / "channels.txt"
    channels.write_text("# h then g\n1e-3,0 0,2e-3 5e-4,5e-4 1e-3,0\n\n2e-3,-1e-3 1e-3,1e-3\n", encoding="utf-8")
    out = tmp_path / "file.json"
    assert main(["solve", small_config(), "--channels", str(channels), "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["report"]["primal_objective"] > 0


def test_parse_channels_file(tmp_path):
    cfg = SystemConfig.reference_defaults(K=2, N=1)
    path = tmp_path / "ch.txt"
    path.write_text("1,2\n3,-4 5,6  # comment\n", encoding="utf-8")
    channels = parse_channels_file(str(path), cfg)
    assert np.allclose(channels.h[:, 0], [1 + 2j, 3 - 4j])
    assert np.allclose(channels.g[:, 0], [1 + 2j, 5 + 6j])


@pytest.mark.parametrize("text, line", [
    ("1,2\n3;4\n", 2),
    ("1,2\nx,4\n", 2),
    ("1,2 3,4 5,6\n1,2\n", 1),
    ("1,2\nnan,0\n", 2),
    ("1,2\n", None),
])
def test_parse_channels_file_errors(tmp_path, text, line):
    cfg = SystemConfig.reference_defaults(K=2, N=1)
    path = tmp_path / "bad.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        parse_channels_file(str(path), cfg)
    assert info.value.line == line


def test_sweep_users_writes_csv(small_config, tmp_path):
    config = small_config(extra="\n[sweep]\nvariable = K\nvalues = 1, 2\ntrials = 1\nschemes = local-only\n")
    out = tmp_path / "users.csv"
    assert main(["sweep-users", config, "--out", str(out), "--threads", "1"]) == EXIT_OK
    lines = out.read_text(encoding="utf-8").splitlines()
    assert [line.split(",")[:3] for line in lines[1:]] == [["K", "1", "local-only"], ["K", "2", "local-only"]]


def test_validate_needs_cases(capsys):
    assert main(["validate", "--cases", "0"]) == EXIT_INPUT


@pytest.mark.parametrize("argv", [
    [],
    ["transmit"],
    ["solve"],
    ["sweep-power", "cfg.ini"],
    ["solve", "cfg.ini", "--seed", "1", "--channels", "c.txt", "--out", "x.json"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == EXIT_INPUT


def test_missing_config_exits_one(tmp_path):
    assert main(["certify", str(tmp_path / "missing.ini")]) == EXIT_INPUT


def test_validate_matches_brute_force(capsys):
    assert main(["validate", "--seed", "7", "--cases", "20"]) == EXIT_OK
    out = capsys.readouterr().out
    (line,) = [line for line in out.splitlines() if "max relative deviation" in line]
    assert float(line.split()[-1]) <= 1e-2


def test_solve_exports_phase_traces(small_config, tmp_path, capsys):
    traces = tmp_path / "traces.json"
    argv = ["solve", small_config(), "--seed", "1", "--out", str(tmp_path / "r.json"), "--trace-out", str(traces)]
    assert main(argv) == EXIT_OK
    doc = json.loads(traces.read_text(encoding="utf-8"))
    (joint,) = [trace for trace in doc if trace["operation"] == "joint_solve"]
    kinds = {event["type"] for event in joint["events"]}
    assert {"dual", "recovery", "gap"} <= kinds
    assert joint["status"] == "completed"
    assert "traces to" in capsys.readouterr().out


def test_trace_out_is_cleared_between_runs(small_config, tmp_path):
    traces = tmp_path / "traces.json"
    config = small_config()
    for run in ("a", "b"):
        out = str(tmp_path / f"{run}.json")
        assert main(["solve", config, "--seed", "1", "--out", out, "--trace-out", str(traces)]) == EXIT_OK
    doc = json.loads(traces.read_text(encoding="utf-8"))
    assert [trace["operation"] for trace in doc].count("joint_solve") == 1


def test_uncertified_solve_exits_two(small_config, tmp_path, capsys):
    config = small_config(extra="\n[solver]\ngap_tol = 1e-12\nsdp_max_iter = 1\npolish = no\n")
    out = tmp_path / "loose.json"
    assert main(["solve", config, "--seed", "1", "--out", str(out)]) == EXIT_NONCONVERGED
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["report"]["status"] == "gap-exceeded"
    assert "❌" in capsys.readouterr().out
