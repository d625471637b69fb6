"""Command line surface: exit codes, printed lines, and the HTTP client
commands against a live server."""

from __future__ import annotations

import json
import socket
import threading
import time

import pytest

from dctwin import cli
from dctwin.api import create_app
from dctwin.orchestrator import load_config, run_to_completion
from dctwin.workspace import Workspace

from .test_api import seeded_recommendation
from .test_orchestrator import synth_scenario


class TestSynth:
    def test_writes_runnable_scenario(self, tmp_path, capsys):
        code = cli.main(
            ["synth", "--profile", "steady", "--days", "1", "--hosts", "4",
             "--out", str(tmp_path)]
        )
        assert code == 0
        for name in ("topology.json", "workload.csv", "telemetry.jsonl", "config.json"):
            assert (tmp_path / name).exists()
        out = capsys.readouterr().out
        assert "wrote steady scenario" in out
        # and the scenario actually runs
        load_config(tmp_path / "config.json")

    def test_constant_load_profile(self, tmp_path, capsys):
        code = cli.main(
            ["synth", "--profile", "constant-load", "--days", "1", "--hosts", "2",
             "--out", str(tmp_path)]
        )
        assert code == 0
        assert "constant-load scenario" in capsys.readouterr().out

    def test_unknown_profile_is_config_error(self, tmp_path, capsys):
        code = cli.main(
            ["synth", "--profile", "bursty", "--out", str(tmp_path)]
        )
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_nonpositive_days_rejected(self, tmp_path, capsys):
        code = cli.main(
            ["synth", "--profile", "steady", "--days", "0", "--out", str(tmp_path)]
        )
        assert code == 2


class TestRun:
    def test_run_prints_window_lines_and_summary(self, tmp_path, capsys):
        config_path = synth_scenario(tmp_path, n_windows=3)
        code = cli.main(["run", "--config", str(config_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("window ") == 3
        assert "done: 3 windows" in out

    def test_quiet_suppresses_window_lines(self, tmp_path, capsys):
        config_path = synth_scenario(tmp_path, n_windows=2)
        code = cli.main(["run", "--config", str(config_path), "--quiet"])
        assert code == 0
        out = capsys.readouterr().out
        assert "window " not in out
        assert "done: 2 windows" in out

    def test_no_calibration_flag(self, tmp_path, capsys):
        config_path = synth_scenario(tmp_path, true_r=3.0, n_windows=3)
        code = cli.main(["run", "--config", str(config_path), "--no-calibration"])
        assert code == 0
        ws = Workspace(load_config(config_path).workspace)
        assert all(
            ws.read_report_dict(i)["params_used"]["r"] == 2.0
            for i in ws.report_indices()
        )

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = cli.main(["run", "--config", str(tmp_path / "absent.json")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_horizon_override_exits_2(self, tmp_path, capsys):
        config_path = synth_scenario(tmp_path, n_windows=2)
        code = cli.main(["run", "--config", str(config_path), "--horizon", "5000"])
        assert code == 2


class TestReplayCheck:
    def test_identical_runs_pass(self, tmp_path, capsys):
        config_path = synth_scenario(tmp_path, n_windows=2)
        code = cli.main(["replay-check", "--config", str(config_path)])
        assert code == 0
        assert "OK: 2 reports byte-identical" in capsys.readouterr().out


@pytest.fixture(scope="module")
def live_api(tmp_path_factory):
    """Real uvicorn server over a finished run plus one pending recommendation."""
    import uvicorn

    root = tmp_path_factory.mktemp("cliapi")
    config_path = synth_scenario(root, n_windows=2)
    config = load_config(config_path)
    run_to_completion(config)
    ws = Workspace(config.workspace)
    seeded_recommendation(ws)

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(
        uvicorn.Config(create_app(ws), host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10.0
    while time.monotonic() < deadline and not server.started:
        time.sleep(0.02)
    assert server.started
    yield f"127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5.0)


class TestRemoteCommands:
    def test_status_prints_snapshot(self, live_api, capsys):
        code = cli.main(["status", "--addr", live_api])
        assert code == 0
        out = capsys.readouterr().out
        assert "windows              2 total, 2 scored" in out
        assert "pending recs         1" in out

    def test_decide_approve(self, live_api, capsys):
        code = cli.main(
            ["decide", "underutilization-w00003", "--approve",
             "--operator", "sam", "--addr", live_api]
        )
        assert code == 0
        assert "approved by sam" in capsys.readouterr().out

    def test_second_decision_maps_conflict_to_exit_3(self, live_api, capsys):
        code = cli.main(
            ["decide", "underutilization-w00003", "--reject",
             "--operator", "kim", "--addr", live_api]
        )
        assert code == 3
        assert "api error 409" in capsys.readouterr().err

    def test_unknown_id_exits_3(self, live_api, capsys):
        code = cli.main(
            ["decide", "absent", "--approve", "--operator", "sam",
             "--addr", live_api]
        )
        assert code == 3
        assert "api error 404" in capsys.readouterr().err

    def test_unreachable_api_exits_3(self, capsys):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            dead_port = probe.getsockname()[1]
        code = cli.main(["status", "--addr", f"127.0.0.1:{dead_port}"])
        assert code == 3
        assert "cannot reach api" in capsys.readouterr().err


class TestServeFlag:
    def test_run_with_serve_exposes_api_during_run(self, tmp_path, capsys):
        import urllib.request

        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        config_path = synth_scenario(
            tmp_path, n_windows=3,
            extra={"api": {"addr": f"127.0.0.1:{port}"}},
        )
        seen_status: list[dict] = []

        def poll():
            deadline = time.monotonic() + 15.0
            while time.monotonic() < deadline:
                try:
                    with urllib.request.urlopen(
                        f"http://127.0.0.1:{port}/api/v1/status", timeout=1.0
                    ) as response:
                        seen_status.append(json.loads(response.read()))
                        if seen_status[-1]["windows_total"] >= 1:
                            return
                except OSError:
                    pass
                time.sleep(0.02)

        poller = threading.Thread(target=poll)
        poller.start()
        code = cli.main(["run", "--config", str(config_path), "--serve", "--quiet"])
        poller.join(timeout=20.0)
        assert code == 0
        assert seen_status and seen_status[-1]["windows_total"] >= 1
