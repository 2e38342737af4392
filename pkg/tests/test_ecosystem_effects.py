"""
Directional checks on the default synthetic ecosystem.

These run full-length grids and are marked slow.
"""
import pytest

from portsim.experiments import ExperimentGrid, aggregate, run_traces


@pytest.mark.slow
def test_exclusive_profiles_lift_niche_consumers(desk_dataset):
    grid = ExperimentGrid(conditions=["algorithm_specific"], algorithms=["itemknn"])
    traces = run_traces(desk_dataset, grid)
    result = aggregate(traces, grid.eval_cycles)

    niche_base = result.get("baseline", "itemknn", "consumer", "Niche")
    niche = result.get("algorithm_specific", "itemknn", "consumer", "Niche")
    generic = result.get("algorithm_specific", "itemknn", "consumer", "Generic")
    assert niche.mean_utility > niche_base.mean_utility
    assert abs(generic.pct_delta) < abs(niche.pct_delta)

    # every seed on its own, not just the average
    for seed in grid.seeds:
        per_seed = aggregate([t for t in traces if t.seed == seed], grid.eval_cycles)
        assert (
            per_seed.get("algorithm_specific", "itemknn", "consumer", "Niche").mean_utility
            > per_seed.get("baseline", "itemknn", "consumer", "Niche").mean_utility
        )
