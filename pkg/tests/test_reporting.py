"""Test result export, the manifest and plots."""
import orjson
import pandas as pd
import pytest

from portsim.dataset import Group
from portsim.engine import SimConfig
from portsim.experiments import AggregateResult, ExperimentGrid, ResultRow, Stakeholder, run_grid
from portsim.portability import Condition
from portsim.recommenders import AlgorithmKind, RecommenderParams
from portsim.reporting import (
    MANIFEST_FILE,
    RESULT_COLUMNS,
    RESULT_FILES,
    TRAJECTORY_FILE,
    ReportIOError,
    build_manifest,
    export_results,
    read_results,
)


@pytest.fixture(scope="module")
def grid_outcome(small_dataset):
    grid = ExperimentGrid(
        conditions=["cold_start", "universal"],
        algorithms=["als"],
        seeds=[0, 1],
        eval_cycles=2,
        simulation=SimConfig(
            cycles=3, days_per_cycle=2, warmup_cycles=1,
            recommender=RecommenderParams(factors=8, sweeps=3),
        ),
    )
    return run_grid(small_dataset, grid)


def test_export_writes_tables(grid_outcome, tmp_path):
    written = export_results(grid_outcome.result, tmp_path, grid_outcome.traces)
    names = {p.name for p in written}
    assert names == {*RESULT_FILES.values(), TRAJECTORY_FILE, MANIFEST_FILE}

    for stakeholder, name in RESULT_FILES.items():
        frame = pd.read_csv(tmp_path / name)
        assert list(frame.columns) == RESULT_COLUMNS
        assert len(frame) == len(grid_outcome.result.for_stakeholder(stakeholder))
    consumers = pd.read_csv(tmp_path / RESULT_FILES[Stakeholder.CONSUMER])
    baseline = consumers[consumers["condition"] == "baseline"]
    assert (baseline["pct_delta_vs_baseline"] == 0.0).all()


def test_results_round_trip(grid_outcome, tmp_path):
    export_results(grid_outcome.result, tmp_path)
    loaded = read_results(tmp_path, eval_cycles=grid_outcome.result.eval_cycles)
    key = lambda r: (r.condition, r.algorithm, r.stakeholder, r.group)  # noqa: E731
    assert [key(r) for r in loaded.rows] == [key(r) for r in grid_outcome.result.rows]
    assert loaded.digest() == grid_outcome.result.digest()


def test_read_results_orders_rows_like_aggregate(tmp_path):
    rows = [
        ResultRow(Condition.BASELINE, AlgorithmKind.ITEMKNN, stakeholder, group, 0.25, 0.0)
        for stakeholder in Stakeholder for group in Group
    ] + [
        ResultRow(Condition.UNIVERSAL, AlgorithmKind.ITEMKNN, stakeholder, group, 0.5, 100.0)
        for stakeholder in Stakeholder for group in Group
    ]
    result = AggregateResult(rows=rows, eval_cycles=2)
    export_results(result, tmp_path)
    loaded = read_results(tmp_path, eval_cycles=2)
    assert [(r.condition, r.stakeholder) for r in loaded.rows[:4]] == [
        (Condition.BASELINE, Stakeholder.CONSUMER), (Condition.BASELINE, Stakeholder.CONSUMER),
        (Condition.BASELINE, Stakeholder.PROVIDER), (Condition.BASELINE, Stakeholder.PROVIDER),
    ]
    assert loaded.digest() == result.digest()


def test_trajectory_table(grid_outcome, tmp_path):
    export_results(grid_outcome.result, tmp_path, grid_outcome.traces)
    frame = pd.read_csv(tmp_path / TRAJECTORY_FILE)
    assert set(frame["cycle"]) == {1, 2, 3}
    assert set(frame["stakeholder"]) == {s.value for s in Stakeholder}
    assert set(frame["condition"]) == {"baseline", "cold_start", "universal"}


class TestManifest:
    def test_stable(self, grid_outcome):
        first = build_manifest(grid_outcome.result, grid_outcome.traces)
        second = build_manifest(grid_outcome.result, list(reversed(grid_outcome.traces)))
        assert first == second

    def test_contents(self, grid_outcome, tmp_path):
        export_results(grid_outcome.result, tmp_path, grid_outcome.traces)
        manifest = orjson.loads((tmp_path / MANIFEST_FILE).read_bytes())
        assert manifest["conditions"] == ["baseline", "cold_start", "universal"]
        assert manifest["algorithms"] == ["als"]
        assert manifest["seeds"] == [0, 1]
        assert len(manifest["runs"]) == 6
        assert manifest["eval_cycles"] == 2
        assert "condition" not in manifest["simulation"]
        assert manifest["simulation"]["utility"]["tau"] == 0.2
        assert len(manifest["dataset_digests"]) == 1
        assert manifest["results_digest"] == grid_outcome.result.digest()
        assert set(manifest["metrics"]) == {"consumer", "provider"}

    def test_changes_with_results(self, grid_outcome):
        full = build_manifest(grid_outcome.result, grid_outcome.traces)
        partial = build_manifest(grid_outcome.result, grid_outcome.traces[:2])
        assert full["digest"] != partial["digest"]


def test_plots(grid_outcome, tmp_path):
    written = export_results(grid_outcome.result, tmp_path, plots=True)
    plots = [p for p in written if p.suffix == ".png"]
    assert len(plots) == 2
    for path in plots:
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_unwritable_output(grid_outcome, tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    with pytest.raises(ReportIOError):
        export_results(grid_outcome.result, blocker / "results")
    with pytest.raises(ReportIOError):
        export_results(grid_outcome.result, blocker)
