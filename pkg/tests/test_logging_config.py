"""Test structured logging setup."""
import io
import json
import sys

import structlog

from portsim.logging_config import LOGGER_NAME, setup_logging


def test_events_reach_stdlib_handlers(caplog):
    setup_logging("INFO", json_logs=True)
    structlog.get_logger(f"{LOGGER_NAME}.engine").info("run_started", run_id="baseline-als-0")
    structlog.get_logger(f"{LOGGER_NAME}.engine").debug("switch_applied")

    lines = [r.getMessage() for r in caplog.records if r.name == f"{LOGGER_NAME}.engine"]
    assert len(lines) == 1
    event = json.loads(lines[0])
    assert event["event"] == "run_started"
    assert event["run_id"] == "baseline-als-0"
    assert event["level"] == "info"


def test_closed_stderr_does_not_break_logging(monkeypatch):
    stream = io.StringIO()
    monkeypatch.setattr(sys, "stderr", stream)
    setup_logging("DEBUG")
    stream.close()

    logger = structlog.get_logger(f"{LOGGER_NAME}.engine")
    logger.info("cycle_finished", cycle=1)
    logger.debug("switch_applied", consumer="u1")


def test_simulation_runs_after_cli_call(small_dataset, tmp_path, capsys):
    from portsim.cli import main
    from portsim.engine import SimConfig, run_simulation

    assert main(["synth", "--out", str(tmp_path / "synthetic"), "--consumers", "40",
                 "--items", "40", "--providers", "8"]) == 0
    capsys.readouterr()

    config = SimConfig(cycles=2, warmup_cycles=1, algorithm="itemknn", knn_neighbors=10)
    trace = run_simulation(small_dataset, config)
    assert len(trace.cycles) == 2
