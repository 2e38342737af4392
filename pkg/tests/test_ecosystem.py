"""Test the ecosystem model: profile stores and exposure tracking."""
import numpy as np
import pytest

from portsim.dataset import Group
from portsim.ecosystem import (
    ClickEvent,
    ContractViolation,
    ExposureTracker,
    ProfileMode,
    ProfileStore,
    ProviderState,
    UnknownRecommenderError,
    build_items,
    get_profile,
    record_slate_exposure,
    withheld_items,
)

ROSTER = ("generic", "niche")


def click(consumer, item, cycle, day):
    return ClickEvent(consumer, item, day, cycle)


class TestProfileStore:
    def test_partitions_are_independent(self):
        store = ProfileStore(ROSTER)
        store.append_click("generic", click("u1", "a", 1, 1))
        assert get_profile(store, "generic", "u1") == [click("u1", "a", 1, 1)]
        assert get_profile(store, "niche", "u1") == []

    def test_shared_mode_aliases_one_profile(self):
        store = ProfileStore(ROSTER, ProfileMode.SHARED)
        store.append_click("niche", click("u1", "a", 1, 1))
        assert store.get_profile("generic", "u1") == store.get_profile("niche", "u1")
        assert store.visible_click_count("u1") == 1

    def test_get_profile_returns_a_copy(self):
        store = ProfileStore(ROSTER)
        store.append_click("generic", click("u1", "a", 1, 1))
        store.get_profile("generic", "u1").clear()
        assert len(store.get_profile("generic", "u1")) == 1

    def test_unknown_recommender(self):
        store = ProfileStore(ROSTER)
        with pytest.raises(UnknownRecommenderError):
            store.get_profile("other", "u1")

    def test_clicks_must_be_time_ordered(self):
        store = ProfileStore(ROSTER)
        store.append_click("generic", click("u1", "a", 2, 1))
        with pytest.raises(ContractViolation):
            store.append_click("generic", click("u1", "b", 1, 3))

    def test_merge_is_chronological(self):
        store = ProfileStore(ROSTER)
        store.append_click("niche", click("u1", "n1", 1, 2))
        store.append_click("niche", click("u1", "n2", 3, 1))
        store.merge_profile("niche", "u1", [click("u1", "g1", 1, 1), click("u1", "g2", 2, 3)])
        assert [e.item_id for e in store.get_profile("niche", "u1")] == ["g1", "n1", "g2", "n2"]

    def test_take_profile_empties_origin(self):
        store = ProfileStore(ROSTER)
        store.append_click("generic", click("u1", "a", 1, 1))
        taken = store.take_profile("generic", "u1")
        assert len(taken) == 1
        assert store.get_profile("generic", "u1") == []
        assert store.delete_profile("generic", "u1") == 0

    def test_partition_view_skips_empty_profiles(self):
        store = ProfileStore(ROSTER)
        store.merge_profile("generic", "u1", [])
        store.append_click("generic", click("u2", "a", 1, 1))
        assert list(store.partition("generic")) == ["u2"]

    def test_digest_tracks_content(self):
        store = ProfileStore(ROSTER)
        before = store.digest()
        store.append_click("generic", click("u1", "a", 1, 1))
        assert store.digest() != before


class TestExposureTracker:
    def test_unclicked_items_accumulate(self):
        tracker = ExposureTracker()
        for _ in range(3):
            record_slate_exposure(tracker, "u1", ["a", "b", "c"], "a")
        assert tracker.counter("u1", "b") == 3
        assert tracker.counter("u1", "a") == 0
        assert withheld_items(tracker, "u1") == {"b", "c"}

    def test_click_resets_counter(self):
        tracker = ExposureTracker()
        record_slate_exposure(tracker, "u1", ["a", "b"], "a")
        record_slate_exposure(tracker, "u1", ["a", "b"], "a")
        record_slate_exposure(tracker, "u1", ["a", "b"], "b")
        assert tracker.counter("u1", "b") == 0
        assert tracker.counter("u1", "a") == 1

    def test_counters_are_per_consumer(self):
        tracker = ExposureTracker()
        for _ in range(3):
            tracker.record_slate_exposure("u1", ["a", "b"], "a")
        assert withheld_items(tracker, "u2") == set()

    def test_roll_cycle_withholds_for_one_cycle(self):
        tracker = ExposureTracker(threshold=3)
        for _ in range(3):
            tracker.record_slate_exposure("u1", ["a", "b"], "a")
        assert tracker.roll_cycle() == 1
        assert tracker.active_withholds("u1") == {"b"}
        assert tracker.counter("u1", "b") == 0
        assert tracker.roll_cycle() == 0
        assert tracker.active_withholds("u1") == set()

    def test_clicked_item_must_be_in_slate(self):
        tracker = ExposureTracker()
        with pytest.raises(ContractViolation):
            tracker.record_slate_exposure("u1", ["a", "b"], "z")


def test_provider_clicks_need_an_open_cycle():
    provider = ProviderState("p1", Group.GENERIC)
    with pytest.raises(ContractViolation):
        provider.record_click()
    provider.open_cycle()
    provider.record_click()
    provider.record_click()
    provider.open_cycle()
    assert provider.clicks_per_cycle == [2, 0]


def test_click_event_validates_time():
    with pytest.raises(ContractViolation):
        ClickEvent("u1", "a", day=0, cycle=1)


def test_build_items_rejects_empty_features():
    with pytest.raises(ContractViolation):
        build_items({"a": np.zeros(3)}, {"a": "p1"})
    items = build_items({"b": np.array([1.0, 0.0]), "a": np.array([0.0, 1.0])}, {"a": "p", "b": "q"})
    assert list(items) == ["a", "b"]
    assert items["b"].provider == "q"
