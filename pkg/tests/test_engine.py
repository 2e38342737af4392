"""Test the simulation engine and trace files."""
import pytest
from pydantic import ValidationError

from portsim.choice import UtilityParams, slate_utility
from portsim.ecosystem import GENERIC_RECOMMENDER, NICHE_RECOMMENDER, ProfileMode
from portsim.engine import (
    SimConfig,
    TraceFormatError,
    initialize_ecosystem,
    read_trace,
    run_simulation,
    trace_digest,
    trace_filename,
    write_trace,
)
from portsim.portability import Condition
from portsim.recommenders import AlgorithmKind, RecommenderParams

FAST_MODEL = RecommenderParams(factors=8, sweeps=3, epochs=3, knn_neighbors=10)


def fast_config(**overrides):
    values = dict(cycles=4, days_per_cycle=2, warmup_cycles=1, recommender=FAST_MODEL)
    values.update(overrides)
    return SimConfig(**values)


@pytest.fixture(scope="module")
def switching_trace(small_dataset):
    """High tau pushes almost everyone to switch once warm-up ends."""
    config = fast_config(
        condition=Condition.USER_OWNERSHIP,
        algorithm=AlgorithmKind.ITEMKNN,
        utility=UtilityParams(tau=0.9),
        trace_days=True,
    )
    return run_simulation(small_dataset, config)


class TestInitialize:
    def test_everyone_starts_generic(self, small_dataset):
        config = fast_config(condition=Condition.COLD_START, utility=UtilityParams(tau=0.35))
        state = initialize_ecosystem(small_dataset, config)
        assert set(state.consumers) == set(small_dataset.consumers)
        for consumer in state.consumers.values():
            assert consumer.attached == GENERIC_RECOMMENDER
            assert consumer.utility_estimates == {GENERIC_RECOMMENDER: 0.35, NICHE_RECOMMENDER: 0.35}
            assert consumer.pending_switch is None
        assert not any(r.trained for r in state.recommenders.values())

    def test_baseline_has_one_recommender(self, small_dataset):
        state = initialize_ecosystem(small_dataset, fast_config())
        assert list(state.recommenders) == [GENERIC_RECOMMENDER]

    def test_universal_uses_shared_store(self, small_dataset):
        state = initialize_ecosystem(small_dataset, fast_config(condition=Condition.UNIVERSAL))
        assert state.store.mode == ProfileMode.SHARED

    def test_niche_filter(self, small_dataset):
        state = initialize_ecosystem(small_dataset, fast_config(condition=Condition.COLD_START))
        niche = state.recommenders[NICHE_RECOMMENDER]
        niche_index = small_dataset.genre_space.niche_index
        for item_id, record in state.items.items():
            assert niche.passes(item_id) == (record.features[niche_index] > 0)


class TestSimulation:
    def test_baseline_never_switches(self, small_dataset):
        trace = run_simulation(small_dataset, fast_config(utility=UtilityParams(tau=0.9)))
        assert trace.switches == []
        for record in trace.cycles:
            assert record.attachment_counts == {GENERIC_RECOMMENDER: len(small_dataset.consumers)}

    def test_switches_only_after_warmup(self, switching_trace):
        warmup = switching_trace.config.warmup_cycles
        assert switching_trace.switches
        assert all(event.cycle > warmup for event in switching_trace.switches)
        assert all(r.switches == [] for r in switching_trace.cycles[:warmup])

    def test_every_consumer_day_accounted(self, switching_trace, small_dataset):
        expected = len(small_dataset.consumers) * switching_trace.config.days_per_cycle
        for record in switching_trace.cycles:
            assert record.clicks + record.skipped_days == expected
            assert sum(record.provider_clicks.values()) == record.clicks

    def test_attachment_counts_cover_everyone(self, switching_trace, small_dataset):
        for record in switching_trace.cycles:
            assert sum(record.attachment_counts.values()) == len(small_dataset.consumers)

    def test_niche_slates_hold_only_niche_items(self, switching_trace, small_dataset):
        niche_index = small_dataset.genre_space.niche_index
        niche_days = [d for d in switching_trace.days if d.outcome.recommender_id == NICHE_RECOMMENDER]
        assert niche_days
        for day in niche_days:
            for item_id in day.outcome.slate.items:
                assert small_dataset.item_features[item_id][niche_index] > 0

    def test_slates_are_full_and_distinct(self, switching_trace):
        for day in switching_trace.days:
            items = day.outcome.slate.items
            assert len(set(items)) == len(items) <= switching_trace.config.slate_size
            assert day.outcome.selected in items

    def test_day_records_carry_slate_utility(self, switching_trace, small_dataset):
        items = initialize_ecosystem(small_dataset, switching_trace.config).items
        assert switching_trace.days
        for record in switching_trace.days:
            outcome = record.outcome
            preferences = small_dataset.preferences[outcome.consumer_id]
            assert outcome.slate_utility == pytest.approx(
                slate_utility(outcome.slate.items, items, preferences)
            )

    def test_switch_targets_follow_attachments(self, switching_trace):
        cycles = switching_trace.cycles
        for previous, record in zip(cycles, cycles[1:]):
            for event in previous.switches:
                assert record.attachments[event.consumer_id] == event.to_recommender
                assert previous.attachments[event.consumer_id] == event.from_recommender

    @pytest.mark.parametrize("algorithm", list(AlgorithmKind))
    def test_deterministic(self, small_dataset, algorithm):
        config = fast_config(condition=Condition.COLD_START, algorithm=algorithm, cycles=3)
        first = run_simulation(small_dataset, config)
        second = run_simulation(small_dataset, config)
        assert trace_digest(first) == trace_digest(second)

    def test_seed_changes_outcome(self, small_dataset):
        a = run_simulation(small_dataset, fast_config(seed=1, cycles=2))
        b = run_simulation(small_dataset, fast_config(seed=2, cycles=2))
        assert trace_digest(a) != trace_digest(b)


class TestSimConfig:
    def test_warmup_must_leave_cycles(self):
        with pytest.raises(ValidationError):
            SimConfig(cycles=2, warmup_cycles=2)

    def test_slate_needs_two_positions(self):
        with pytest.raises(ValidationError):
            SimConfig(slate_size=1)

    def test_roster_and_run_id(self):
        config = SimConfig(condition=Condition.UNIVERSAL, algorithm=AlgorithmKind.BPR, seed=3)
        assert config.roster == (GENERIC_RECOMMENDER, NICHE_RECOMMENDER)
        assert config.run_id == "universal-bpr-3"
        assert trace_filename(config) == "trace-universal-bpr-3.jsonl"


class TestTraceFiles:
    def test_round_trip(self, switching_trace, tmp_path):
        path = write_trace(switching_trace, tmp_path / trace_filename(switching_trace.config))
        loaded = read_trace(path)
        assert trace_digest(loaded) == trace_digest(switching_trace)
        assert loaded.config == switching_trace.config
        assert len(loaded.switches) == len(switching_trace.switches)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "cycle", "cycle": 1}\n')
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line == 1

    def test_garbage_line(self, switching_trace, tmp_path):
        path = write_trace(switching_trace, tmp_path / "trace.jsonl")
        with open(path, "a") as f:
            f.write("not json\n")
        lines = path.read_text().splitlines()
        with pytest.raises(TraceFormatError) as info:
            read_trace(path)
        assert info.value.line == len(lines)

    def test_unknown_record_type(self, switching_trace, tmp_path):
        path = write_trace(switching_trace, tmp_path / "trace.jsonl")
        with open(path, "a") as f:
            f.write('{"type": "mystery"}\n')
        with pytest.raises(TraceFormatError):
            read_trace(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(TraceFormatError):
            read_trace(path)
