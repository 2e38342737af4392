"""Test the command-line interface end to end."""
import orjson
import pandas as pd
import pytest

from portsim.cli import EXIT_CONFIG, EXIT_ERROR, build_parser, main
from portsim.engine import read_trace

GRID = {
    "conditions": ["user_ownership"],
    "algorithms": ["als"],
    "seeds": [0],
    "eval_cycles": 2,
    "simulation": {
        "cycles": 3,
        "days_per_cycle": 2,
        "warmup_cycles": 1,
        "recommender": {"factors": 8, "sweeps": 2},
    },
}


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main([
        "synth", "--out", str(root / "raw"), "--seed", "7",
        "--consumers", "60", "--items", "40", "--providers", "8",
    ]) == 0
    assert main([
        "prepare",
        "--interactions", str(root / "raw" / "interactions.csv"),
        "--catalog", str(root / "raw" / "catalog.csv"),
        "--k-core", "2", "--niche-genre", "Romance",
        "--out", str(root / "data"),
    ]) == 0
    return root / "data"


def run_args(data, out, *extra):
    return ["run", "--data", str(data), "--cycles", "3", "--days", "2", "--out", str(out), *extra]


def test_run_and_report(prepared, tmp_path, capsys):
    runs = tmp_path / "runs"
    capsys.readouterr()
    assert main(run_args(prepared, runs, "--condition", "baseline", "--algo", "itemknn")) == 0
    summary = orjson.loads(capsys.readouterr().out)
    assert summary["trace"].endswith("trace-baseline-itemknn-0.jsonl")
    assert summary["switches"] == 0

    assert main(run_args(prepared, runs, "--condition", "cold_start", "--algo", "itemknn")) == 0
    assert len(list(runs.glob("*.jsonl"))) == 2

    out = tmp_path / "results"
    assert main(["report", "--runs", str(runs), "--out", str(out), "--eval-cycles", "1"]) == 0
    frame = pd.read_csv(out / "consumer_utility.csv")
    assert set(frame["condition"]) == {"baseline", "cold_start"}
    assert "consumer utility" in capsys.readouterr().out


def test_run_is_reproducible(prepared, tmp_path, capsys):
    digests = []
    for name in ("a", "b"):
        capsys.readouterr()
        assert main(run_args(prepared, tmp_path / name, "--condition", "universal", "--seed", "3")) == 0
        digests.append(orjson.loads(capsys.readouterr().out)["digest"])
    assert digests[0] == digests[1]


def test_env_seed_override(prepared, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PORTSIM_SEED", "9")
    capsys.readouterr()
    assert main(run_args(prepared, tmp_path)) == 0
    assert orjson.loads(capsys.readouterr().out)["trace"].endswith("-9.jsonl")


def test_grid(prepared, tmp_path):
    config = tmp_path / "grid.json"
    config.write_bytes(orjson.dumps(GRID))
    out = tmp_path / "out"
    metrics_file = tmp_path / "metrics.prom"
    assert main([
        "--metrics-file", str(metrics_file),
        "grid", "--data", str(prepared), "--config", str(config), "--out", str(out),
    ]) == 0
    assert len(list((out / "runs").glob("*.jsonl"))) == 2
    assert (out / "manifest.json").exists()
    assert "portsim_runs_total" in metrics_file.read_text()


def test_bad_tau_is_config_error(prepared, tmp_path):
    assert main(run_args(prepared, tmp_path, "--tau", "1.5")) == EXIT_CONFIG


def test_run_with_flat_config(prepared, tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_bytes(orjson.dumps(
        {"portability": "cold_start", "algo": "itemknn", "knn_neighbors": 10, "tau": 0.4}
    ))
    capsys.readouterr()
    args = run_args(prepared, tmp_path / "runs", "--config", str(config), "--beta", "3.0")
    assert main(args) == 0
    trace = read_trace(orjson.loads(capsys.readouterr().out)["trace"])
    assert trace.config.run_id == "cold_start-itemknn-0"
    assert trace.config.recommender.knn_neighbors == 10
    assert (trace.config.utility.tau, trace.config.utility.beta) == (0.4, 3.0)


def test_unknown_config_key(prepared, tmp_path):
    config = tmp_path / "run.json"
    config.write_bytes(orjson.dumps({"condtion": "cold_start"}))
    assert main(run_args(prepared, tmp_path / "runs", "--config", str(config))) == EXIT_CONFIG


def test_bad_grid_config(prepared, tmp_path):
    config = tmp_path / "grid.json"
    config.write_bytes(orjson.dumps({**GRID, "seeds": [1, 1]}))
    assert main(["grid", "--data", str(prepared), "--config", str(config),
                 "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_missing_dataset(tmp_path):
    assert main(run_args(tmp_path / "nowhere", tmp_path / "runs")) == EXIT_ERROR


def test_report_without_traces(tmp_path):
    assert main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_no_command():
    assert main([]) == EXIT_CONFIG


def test_parser_defaults():
    args = build_parser().parse_args(["prepare", "--interactions", "i.csv", "--catalog", "c.csv",
                                      "--out", "data"])
    assert args.k_core == 5
    assert args.niche_genre is None
