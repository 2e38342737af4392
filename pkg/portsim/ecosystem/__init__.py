"""
portsim Ecosystem Model
Consumers, items, providers, profile stores and exposure tracking.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import structlog

from portsim.dataset import Group
from portsim.utils import digest

logger = structlog.get_logger()

GENERIC_RECOMMENDER = "generic"
NICHE_RECOMMENDER = "niche"
DEFAULT_EXPOSURE_THRESHOLD = 3


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class UnknownRecommenderError(LookupError):
    def __init__(self, recommender_id: str):
        self.recommender_id = recommender_id
        super().__init__(f"unknown recommender: {recommender_id!r}")


class ProfileMode(str, Enum):
    PARTITIONED = "partitioned"
    SHARED = "shared"


# =============================================================================
# STATE
# =============================================================================

@dataclass
class ConsumerState:
    id: str
    preferences: np.ndarray
    attached: str
    utility_estimates: Dict[str, float]
    group: Group
    pending_switch: Optional[str] = None


@dataclass(frozen=True)
class ItemRecord:
    id: str
    features: np.ndarray
    provider: str

    @property
    def feature_count(self) -> int:
        return int(np.count_nonzero(self.features))


@dataclass
class ProviderState:
    id: str
    group: Group
    clicks_per_cycle: List[int] = field(default_factory=list)

    def open_cycle(self):
        self.clicks_per_cycle.append(0)

    def record_click(self):
        if not self.clicks_per_cycle:
            raise ContractViolation(f"provider {self.id} has no open cycle")
        self.clicks_per_cycle[-1] += 1


@dataclass(frozen=True)
class ClickEvent:
    consumer_id: str
    item_id: str
    day: int
    cycle: int

    def __post_init__(self):
        if self.day < 1 or self.cycle < 1:
            raise ContractViolation(f"invalid click time: cycle={self.cycle} day={self.day}")

    @property
    def sort_key(self) -> Tuple[int, int]:
        return (self.cycle, self.day)


# =============================================================================
# PROFILE STORE
# =============================================================================

class ProfileStore:
    """
    Per-recommender click histories.

    In SHARED mode every recommender id maps to the same partition object,
    so reads through any recommender always agree.
    """

    def __init__(self, recommender_ids: Sequence[str], mode: ProfileMode = ProfileMode.PARTITIONED):
        if not recommender_ids:
            raise ContractViolation("profile store needs at least one recommender")
        self.mode = mode
        self.recommender_ids: Tuple[str, ...] = tuple(recommender_ids)
        if mode == ProfileMode.SHARED:
            shared: Dict[str, List[ClickEvent]] = {}
            self._partitions = {rid: shared for rid in self.recommender_ids}
        else:
            self._partitions = {rid: {} for rid in self.recommender_ids}

    def _partition(self, recommender_id: str) -> Dict[str, List[ClickEvent]]:
        try:
            return self._partitions[recommender_id]
        except KeyError:
            raise UnknownRecommenderError(recommender_id) from None

    def get_profile(self, recommender_id: str, consumer_id: str) -> List[ClickEvent]:
        """Clicks of the consumer visible to the recommender (a copy)."""
        return list(self._partition(recommender_id).get(consumer_id, ()))

    def partition(self, recommender_id: str) -> Mapping[str, Sequence[ClickEvent]]:
        """Read-only view of one recommender's consumer -> clicks map."""
        return {c: tuple(events) for c, events in self._partition(recommender_id).items() if events}

    def append_click(self, recommender_id: str, event: ClickEvent):
        events = self._partition(recommender_id).setdefault(event.consumer_id, [])
        if events and event.sort_key < events[-1].sort_key:
            raise ContractViolation("click events must be appended in time order")
        events.append(event)

    def take_profile(self, recommender_id: str, consumer_id: str) -> List[ClickEvent]:
        """Remove and return the consumer's clicks at a recommender."""
        return self._partition(recommender_id).pop(consumer_id, [])

    def delete_profile(self, recommender_id: str, consumer_id: str) -> int:
        return len(self.take_profile(recommender_id, consumer_id))

    def merge_profile(self, recommender_id: str, consumer_id: str, events: Iterable[ClickEvent]):
        """Chronological merge of events into the consumer's list (stable on ties)."""
        partition = self._partition(recommender_id)
        merged = sorted([*partition.get(consumer_id, ()), *events], key=lambda e: e.sort_key)
        if merged:
            partition[consumer_id] = merged

    def consumer_clicks(self, consumer_id: str) -> List[ClickEvent]:
        """All of a consumer's clicks across distinct partitions."""
        seen: Set[int] = set()
        clicks: List[ClickEvent] = []
        for rid in self.recommender_ids:
            partition = self._partitions[rid]
            if id(partition) in seen:
                continue
            seen.add(id(partition))
            clicks.extend(partition.get(consumer_id, ()))
        return clicks

    def visible_click_count(self, consumer_id: str) -> int:
        return len(self.consumer_clicks(consumer_id))

    def snapshot(self) -> Dict[str, Dict[str, List[Tuple[str, str, int, int]]]]:
        return {
            rid: {
                c: [(e.consumer_id, e.item_id, e.cycle, e.day) for e in events]
                for c, events in sorted(self._partitions[rid].items())
                if events
            }
            for rid in self.recommender_ids
        }

    def digest(self) -> str:
        return digest(self.snapshot())


def get_profile(store: ProfileStore, recommender_id: str, consumer_id: str) -> List[ClickEvent]:
    return store.get_profile(recommender_id, consumer_id)


# =============================================================================
# EXPOSURE TRACKING
# =============================================================================

class ExposureTracker:
    """
    Consecutive unclicked impressions per (consumer, item).

    Counters are global per consumer, not per recommender. At each cycle
    boundary items at or above the threshold are withheld for that cycle
    and their counters reset.
    """

    def __init__(self, threshold: int = DEFAULT_EXPOSURE_THRESHOLD):
        self.threshold = threshold
        self._counters: Dict[Tuple[str, str], int] = {}
        self._withheld: Dict[str, Set[str]] = {}

    def counter(self, consumer_id: str, item_id: str) -> int:
        return self._counters.get((consumer_id, item_id), 0)

    def record_slate_exposure(self, consumer_id: str, slate: Sequence[str], clicked: str):
        if clicked not in slate:
            raise ContractViolation(f"clicked item {clicked!r} is not in the slate")
        for item_id in slate:
            key = (consumer_id, item_id)
            if item_id == clicked:
                self._counters.pop(key, None)
            else:
                self._counters[key] = self._counters.get(key, 0) + 1

    def withheld_items(self, consumer_id: str, threshold: Optional[int] = None) -> Set[str]:
        """Items whose unclicked-impression counter has reached the threshold."""
        limit = self.threshold if threshold is None else threshold
        return {
            item for (consumer, item), count in self._counters.items()
            if consumer == consumer_id and count >= limit
        }

    def roll_cycle(self) -> int:
        """Start a cycle: freeze this cycle's withheld sets and clear their counters."""
        withheld: Dict[str, Set[str]] = {}
        for (consumer, item), count in list(self._counters.items()):
            if count >= self.threshold:
                withheld.setdefault(consumer, set()).add(item)
                del self._counters[(consumer, item)]
        self._withheld = withheld
        return sum(len(items) for items in withheld.values())

    def active_withholds(self, consumer_id: str) -> Set[str]:
        """Items withheld from the consumer for the current cycle."""
        return set(self._withheld.get(consumer_id, ()))


def record_slate_exposure(
    tracker: ExposureTracker, consumer_id: str, slate: Sequence[str], clicked: str
) -> ExposureTracker:
    tracker.record_slate_exposure(consumer_id, slate, clicked)
    return tracker


def withheld_items(
    tracker: ExposureTracker, consumer_id: str, threshold: int = DEFAULT_EXPOSURE_THRESHOLD
) -> Set[str]:
    return tracker.withheld_items(consumer_id, threshold)


def build_items(
    item_features: Mapping[str, np.ndarray], item_providers: Mapping[str, str]
) -> Dict[str, ItemRecord]:
    items: Dict[str, ItemRecord] = {}
    for item_id in sorted(item_features):
        record = ItemRecord(item_id, item_features[item_id], item_providers[item_id])
        if record.feature_count == 0:
            raise ContractViolation(f"item {item_id!r} has an empty feature vector")
        items[item_id] = record
    return items
