"""
portsim Simulation Engine
Cycle/day loop over the ecosystem plus trace recording and trace files.

Per cycle: train every active recommender, run the days, then apply
pending switches and the portability policy. Every random draw comes
from a stream derived from (seed, cycle, day, consumer) so the order in
which consumers are processed never changes a result.
"""
import time
from collections import Counter as TallyCounter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import orjson
import structlog
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, model_validator

from portsim.choice import (
    DailyOutcome,
    UtilityParams,
    item_utilities,
    select_item,
    selection_probabilities,
    slate_utility,
    switch_decision,
    update_provider_utility,
    update_running_utility,
)
from portsim.dataset import Group, LabeledDataset, dataset_digest
from portsim.ecosystem import (
    GENERIC_RECOMMENDER,
    NICHE_RECOMMENDER,
    ClickEvent,
    ConsumerState,
    ExposureTracker,
    ItemRecord,
    ProfileStore,
    ProviderState,
    build_items,
)
from portsim.metrics import metrics
from portsim.portability import Condition, SwitchEvent, apply_policy, validate_store_mode
from portsim.recommenders import (
    AlgorithmKind,
    EmptySlateError,
    ItemCatalog,
    Provenance,
    RecommenderInstance,
    RecommenderParams,
    Slate,
    create_recommender,
    recommend,
    train,
)
from portsim.utils import derive_rng, digest

logger = structlog.get_logger()

TRACE_SUFFIX = ".jsonl"


class TraceFormatError(ValueError):
    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


# =============================================================================
# CONFIGURATION
# =============================================================================

FLAT_SECTIONS = (
    ("utility", frozenset(UtilityParams.model_fields)),
    ("recommender", frozenset(RecommenderParams.model_fields)),
)


class SimConfig(BaseModel):
    """
    One simulation run.

    Documents may give hyperparameters flat (`tau`, `factors`, ...) or in
    the `utility` and `recommender` sections; a flat key overrides the
    nested one. `portability` and `algo` are accepted for `condition` and
    `algorithm`. Unknown keys are rejected.
    """
    model_config = ConfigDict(extra="forbid")

    cycles: int = Field(10, ge=1)
    days_per_cycle: int = Field(3, ge=1)
    slate_size: int = Field(5, ge=2)
    warmup_cycles: int = Field(2, ge=0)
    exposure_threshold: int = Field(3, ge=1)
    utility: UtilityParams = Field(default_factory=UtilityParams)
    recommender: RecommenderParams = Field(default_factory=RecommenderParams)
    condition: Condition = Field(
        Condition.BASELINE, validation_alias=AliasChoices("condition", "portability")
    )
    algorithm: AlgorithmKind = Field(
        AlgorithmKind.ALS, validation_alias=AliasChoices("algorithm", "algo")
    )
    seed: int = 0
    trace_days: bool = False

    @model_validator(mode="before")
    @classmethod
    def _nest_flat_keys(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for section, keys in FLAT_SECTIONS:
            flat = {key: data.pop(key) for key in list(data) if key in keys}
            if not flat:
                continue
            nested = data.get(section) or {}
            if isinstance(nested, BaseModel):
                nested = nested.model_dump()
            data[section] = {**nested, **flat}
        return data

    @model_validator(mode="after")
    def _check_warmup(self) -> "SimConfig":
        if self.warmup_cycles >= self.cycles:
            raise ValueError(
                f"warmup_cycles ({self.warmup_cycles}) must be less than cycles ({self.cycles})"
            )
        return self

    @property
    def roster(self) -> Tuple[str, ...]:
        if self.condition == Condition.BASELINE:
            return (GENERIC_RECOMMENDER,)
        return (GENERIC_RECOMMENDER, NICHE_RECOMMENDER)

    @property
    def run_id(self) -> str:
        return f"{self.condition.value}-{self.algorithm.value}-{self.seed}"


# =============================================================================
# STATE AND TRACE
# =============================================================================

@dataclass
class EcosystemState:
    consumers: Dict[str, ConsumerState]
    items: Dict[str, ItemRecord]
    providers: Dict[str, ProviderState]
    store: ProfileStore
    exposures: ExposureTracker
    recommenders: Dict[str, RecommenderInstance]


@dataclass(frozen=True)
class DayRecord:
    cycle: int
    day: int
    outcome: DailyOutcome


@dataclass
class CycleRecord:
    """
    One cycle's outcome. utilities and attachments describe the recommender
    each consumer used during the cycle; attachment_counts are taken after
    the cycle's switches.
    """
    cycle: int
    utilities: Dict[str, float]
    attachments: Dict[str, str]
    provider_clicks: Dict[str, int]
    switches: List[SwitchEvent] = field(default_factory=list)
    clicks: int = 0
    skipped_days: int = 0
    attachment_counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class SimulationTrace:
    config: SimConfig
    consumer_groups: Dict[str, Group]
    provider_groups: Dict[str, Group]
    cycles: List[CycleRecord] = field(default_factory=list)
    days: List[DayRecord] = field(default_factory=list)
    dataset_digest: Optional[str] = None

    @property
    def condition(self) -> Condition:
        return self.config.condition

    @property
    def algorithm(self) -> AlgorithmKind:
        return self.config.algorithm

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def switches(self) -> List[SwitchEvent]:
        return [event for record in self.cycles for event in record.switches]


# =============================================================================
# SIMULATION
# =============================================================================

def initialize_ecosystem(dataset: LabeledDataset, config: SimConfig) -> EcosystemState:
    """Everyone starts on the generic recommender with every estimate at tau."""
    roster = config.roster
    tau = config.utility.tau
    items = build_items(
        dataset.item_features, {entry.item_id: entry.provider_id for entry in dataset.catalog}
    )
    consumers = {
        cid: ConsumerState(
            id=cid,
            preferences=dataset.preferences[cid],
            attached=GENERIC_RECOMMENDER,
            utility_estimates={rid: tau for rid in roster},
            group=dataset.consumer_labels[cid],
        )
        for cid in dataset.consumers
    }
    providers = {pid: ProviderState(pid, dataset.provider_labels[pid]) for pid in dataset.providers}

    store = ProfileStore(roster, config.condition.store_mode)
    if config.condition.policy is not None:
        validate_store_mode(config.condition.policy, store)

    catalog = ItemCatalog.from_items(items)
    recommenders = {GENERIC_RECOMMENDER: create_recommender(
        GENERIC_RECOMMENDER, config.algorithm, catalog, config.recommender
    )}
    if NICHE_RECOMMENDER in roster:
        recommenders[NICHE_RECOMMENDER] = create_recommender(
            NICHE_RECOMMENDER, config.algorithm, catalog, config.recommender,
            niche_index=dataset.genre_space.niche_index,
        )
    return EcosystemState(
        consumers=consumers,
        items=items,
        providers=providers,
        store=store,
        exposures=ExposureTracker(config.exposure_threshold),
        recommenders=recommenders,
    )


def _run_day(
    state: EcosystemState,
    config: SimConfig,
    cycle: int,
    day: int,
    consumer: ConsumerState,
    switching: bool,
) -> Optional[DailyOutcome]:
    rid = consumer.attached
    rng = derive_rng(config.seed, "day", cycle, day, consumer.id)
    try:
        slate = recommend(
            state.recommenders[rid],
            consumer.id,
            state.exposures.active_withholds(consumer.id),
            rng,
            profile=state.store.get_profile(rid, consumer.id),
            slate_size=config.slate_size,
        )
    except EmptySlateError:
        logger.info("slate_empty", consumer=consumer.id, recommender=rid, cycle=cycle, day=day)
        metrics.record_skipped_day(rid)
        return None

    utilities = item_utilities(slate.items, state.items, consumer.preferences)
    mu = slate_utility(slate.items, state.items, consumer.preferences)
    running = update_running_utility(consumer.utility_estimates[rid], mu, config.utility.beta)
    consumer.utility_estimates[rid] = running

    probabilities = selection_probabilities(utilities, config.utility.softmax_temperature)
    selected = select_item(slate.items, probabilities, rng)
    state.exposures.record_slate_exposure(consumer.id, slate.items, selected)
    state.store.append_click(rid, ClickEvent(consumer.id, selected, day, cycle))
    update_provider_utility(state.providers, state.items[selected], cycle)

    if switching:
        consumer.pending_switch = switch_decision(consumer, config.utility.tau, config.roster)
    return DailyOutcome(consumer.id, rid, slate, selected, mu, running)


def _apply_switches(state: EcosystemState, config: SimConfig, cycle: int) -> List[SwitchEvent]:
    events: List[SwitchEvent] = []
    for cid in sorted(state.consumers):
        consumer = state.consumers[cid]
        target = consumer.pending_switch
        consumer.pending_switch = None
        if target is None:
            continue
        event = SwitchEvent(cid, consumer.attached, target, cycle)
        consumer.attached = target
        apply_policy(config.condition.policy, event, state.store)
        logger.debug("switch_applied", consumer=cid, origin=event.from_recommender,
                     destination=event.to_recommender, cycle=cycle)
        metrics.record_switch(config.condition.value, event.from_recommender, event.to_recommender)
        events.append(event)
    return events


def run_simulation(dataset: LabeledDataset, config: SimConfig) -> SimulationTrace:
    state = initialize_ecosystem(dataset, config)
    trace = SimulationTrace(
        config=config,
        consumer_groups=dict(dataset.consumer_labels),
        provider_groups=dict(dataset.provider_labels),
        dataset_digest=dataset_digest(dataset),
    )
    consumer_ids = sorted(state.consumers)
    started = time.perf_counter()

    with structlog.contextvars.bound_contextvars(
        condition=config.condition.value, algorithm=config.algorithm.value, seed=config.seed
    ):
        logger.info("simulation_started", consumers=len(consumer_ids), cycles=config.cycles)
        for cycle in range(1, config.cycles + 1):
            for provider in state.providers.values():
                provider.open_cycle()
            withheld = state.exposures.roll_cycle()

            for rid in config.roster:
                state.recommenders[rid] = train(
                    state.recommenders[rid],
                    state.store.partition(rid),
                    derive_rng(config.seed, "train", cycle, rid),
                )

            attachments = {cid: state.consumers[cid].attached for cid in consumer_ids}
            switching = cycle > config.warmup_cycles
            clicks: TallyCounter = TallyCounter()
            skipped = 0
            for day in range(1, config.days_per_cycle + 1):
                for cid in consumer_ids:
                    outcome = _run_day(state, config, cycle, day, state.consumers[cid], switching)
                    if outcome is None:
                        skipped += 1
                        continue
                    clicks[outcome.recommender_id] += 1
                    if config.trace_days:
                        trace.days.append(DayRecord(cycle, day, outcome))

            record = CycleRecord(
                cycle=cycle,
                utilities={
                    cid: state.consumers[cid].utility_estimates[attachments[cid]]
                    for cid in consumer_ids
                },
                attachments=attachments,
                provider_clicks={
                    pid: state.providers[pid].clicks_per_cycle[-1] for pid in sorted(state.providers)
                },
                clicks=sum(clicks.values()),
                skipped_days=skipped,
            )
            record.switches = _apply_switches(state, config, cycle)
            tally = TallyCounter(c.attached for c in state.consumers.values())
            record.attachment_counts = {rid: tally.get(rid, 0) for rid in config.roster}
            trace.cycles.append(record)

            for rid, count in sorted(clicks.items()):
                metrics.record_clicks(rid, count)
            logger.info(
                "cycle_completed",
                cycle=cycle,
                clicks=record.clicks,
                skipped_days=skipped,
                switches=len(record.switches),
                withheld_items=withheld,
                attachments=record.attachment_counts,
            )

        duration = time.perf_counter() - started
        metrics.record_run(config.condition.value, config.algorithm.value, duration)
        logger.info("simulation_finished", duration_seconds=round(duration, 3),
                    switches=len(trace.switches))
    return trace


# =============================================================================
# TRACE FILES
# =============================================================================

def trace_records(trace: SimulationTrace) -> Iterator[Dict[str, Any]]:
    """Line records of a trace in file order."""
    yield {
        "type": "run",
        "config": trace.config.model_dump(mode="json"),
        "dataset_digest": trace.dataset_digest,
    }
    for record in trace.cycles:
        yield {
            "type": "cycle",
            "cycle": record.cycle,
            "clicks": record.clicks,
            "skipped_days": record.skipped_days,
            "attachment_counts": record.attachment_counts,
        }
        for cid in sorted(record.utilities):
            yield {
                "type": "consumer_cycle",
                "cycle": record.cycle,
                "consumer_id": cid,
                "group": trace.consumer_groups[cid].value,
                "recommender": record.attachments[cid],
                "utility": record.utilities[cid],
            }
        for pid in sorted(record.provider_clicks):
            yield {
                "type": "provider_cycle",
                "cycle": record.cycle,
                "provider_id": pid,
                "group": trace.provider_groups[pid].value,
                "clicks": record.provider_clicks[pid],
            }
        for event in record.switches:
            yield {"type": "switch", **event.as_dict()}
    for day in trace.days:
        outcome = day.outcome
        yield {
            "type": "day",
            "cycle": day.cycle,
            "day": day.day,
            "consumer_id": outcome.consumer_id,
            "recommender": outcome.recommender_id,
            "slate": list(outcome.slate.items),
            "provenance": [p.value for p in outcome.slate.provenance],
            "selected": outcome.selected,
            "slate_utility": outcome.slate_utility,
            "running_utility": outcome.running_utility,
        }


def trace_digest(trace: SimulationTrace) -> str:
    return digest(list(trace_records(trace)))


def trace_filename(config: SimConfig) -> str:
    return f"trace-{config.run_id}{TRACE_SUFFIX}"


def write_trace(trace: SimulationTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for record in trace_records(trace):
            f.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS))
            f.write(b"\n")
    logger.info("trace_written", path=str(path), cycles=len(trace.cycles))
    return path


def _apply_record(trace: SimulationTrace, cycles: Dict[int, CycleRecord], record: Dict[str, Any]):
    kind = record["type"]
    if kind == "cycle":
        cycles[record["cycle"]] = CycleRecord(
            cycle=record["cycle"],
            utilities={},
            attachments={},
            provider_clicks={},
            clicks=record["clicks"],
            skipped_days=record["skipped_days"],
            attachment_counts=record["attachment_counts"],
        )
    elif kind == "consumer_cycle":
        cycle = cycles[record["cycle"]]
        cid = record["consumer_id"]
        cycle.utilities[cid] = record["utility"]
        cycle.attachments[cid] = record["recommender"]
        trace.consumer_groups[cid] = Group(record["group"])
    elif kind == "provider_cycle":
        pid = record["provider_id"]
        cycles[record["cycle"]].provider_clicks[pid] = record["clicks"]
        trace.provider_groups[pid] = Group(record["group"])
    elif kind == "switch":
        cycles[record["cycle"]].switches.append(
            SwitchEvent(record["consumer_id"], record["from"], record["to"], record["cycle"])
        )
    elif kind == "day":
        slate = Slate(tuple(record["slate"]), tuple(Provenance(p) for p in record["provenance"]))
        trace.days.append(DayRecord(record["cycle"], record["day"], DailyOutcome(
            record["consumer_id"], record["recommender"], slate, record["selected"],
            record["slate_utility"], record["running_utility"],
        )))
    else:
        raise ValueError(f"unknown record type {kind!r}")


def read_trace(path: str | Path) -> SimulationTrace:
    path = Path(path)
    trace: Optional[SimulationTrace] = None
    cycles: Dict[int, CycleRecord] = {}

    with open(path, "rb") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = orjson.loads(line)
                if record["type"] == "run":
                    trace = SimulationTrace(
                        config=SimConfig.model_validate(record["config"]),
                        consumer_groups={},
                        provider_groups={},
                        dataset_digest=record.get("dataset_digest"),
                    )
                elif trace is None:
                    raise ValueError("first record must be the run header")
                else:
                    _apply_record(trace, cycles, record)
            except (KeyError, TypeError, ValueError) as e:
                raise TraceFormatError(str(path), lineno, str(e)) from e

    if trace is None:
        raise TraceFormatError(str(path), 1, "empty trace file")
    trace.cycles = [cycles[c] for c in sorted(cycles)]
    return trace


def read_traces(runs_dir: str | Path) -> List[SimulationTrace]:
    return [read_trace(p) for p in sorted(Path(runs_dir).glob(f"*{TRACE_SUFFIX}"))]
