"""
portsim Experiment Runner
Condition x algorithm x seed grids, evaluation-window aggregation and
percent-deltas against the single-recommender baseline.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator

from portsim.config import ConfigurationError, get_settings
from portsim.dataset import Group, LabeledDataset
from portsim.engine import FLAT_SECTIONS, SimConfig, SimulationTrace, run_simulation
from portsim.portability import Condition
from portsim.recommenders import AlgorithmKind
from portsim.utils import digest

logger = structlog.get_logger()

DEFAULT_SEEDS = [0, 1, 2, 3, 4]
POLICY_CONDITIONS = [c for c in Condition if c != Condition.BASELINE]
GRID_SIMULATION_KEYS = frozenset(SimConfig.model_fields).union(
    *(keys for _, keys in FLAT_SECTIONS)
) - {"condition", "algorithm", "seed"}


class Stakeholder(str, Enum):
    CONSUMER = "consumer"
    PROVIDER = "provider"


class GridRunError(RuntimeError):
    def __init__(self, condition: str, algorithm: str, seed: int, reason: str = ""):
        self.condition = condition
        self.algorithm = algorithm
        self.seed = seed
        super().__init__(
            f"run failed: condition={condition} algorithm={algorithm} seed={seed}"
            + (f" ({reason})" if reason else "")
        )


# =============================================================================
# GRID
# =============================================================================

class ExperimentGrid(BaseModel):
    """
    Runs to execute. Simulation keys given at the top level (`tau`,
    `factors`, `warmup_cycles`, ...) are folded into `simulation`.
    """
    model_config = ConfigDict(extra="forbid")

    conditions: List[Condition] = Field(
        default_factory=lambda: list(POLICY_CONDITIONS),
        validation_alias=AliasChoices("conditions", "portability"),
    )
    algorithms: List[AlgorithmKind] = Field(
        default_factory=lambda: list(AlgorithmKind),
        validation_alias=AliasChoices("algorithms", "algo"),
    )
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    eval_cycles: int = Field(5, ge=1)
    workers: int = Field(1, ge=1)
    simulation: SimConfig = Field(default_factory=SimConfig)

    @model_validator(mode="before")
    @classmethod
    def _nest_simulation_keys(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for key in ("conditions", "portability", "algorithms", "algo"):
            if isinstance(data.get(key), str):
                data[key] = [data[key]]
        flat = {key: data.pop(key) for key in list(data) if key in GRID_SIMULATION_KEYS}
        if flat:
            nested = data.get("simulation") or {}
            if isinstance(nested, BaseModel):
                nested = nested.model_dump()
            data["simulation"] = {**nested, **flat}
        return data

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"seeds must be distinct, got {seeds}")
        return seeds

    @field_validator("conditions", "algorithms")
    @classmethod
    def _non_empty(cls, values: list) -> list:
        if not values:
            raise ValueError("must not be empty")
        return list(dict.fromkeys(values))

    @model_validator(mode="after")
    def _check_window(self) -> "ExperimentGrid":
        if self.eval_cycles > self.simulation.cycles:
            raise ValueError(
                f"eval_cycles ({self.eval_cycles}) exceeds simulation cycles ({self.simulation.cycles})"
            )
        return self

    def effective_seeds(self) -> List[int]:
        override = get_settings().SEED
        return [override] if override is not None else list(self.seeds)

    def run_configs(self) -> List[SimConfig]:
        """One config per run, baseline first for each algorithm."""
        conditions = [Condition.BASELINE] + [c for c in self.conditions if c != Condition.BASELINE]
        return [
            self.simulation.model_copy(update={"condition": c, "algorithm": a, "seed": s})
            for a in self.algorithms
            for c in conditions
            for s in self.effective_seeds()
        ]


# =============================================================================
# RUNNING
# =============================================================================

_worker_dataset: Optional[LabeledDataset] = None


def _init_worker(dataset: LabeledDataset):
    global _worker_dataset
    from portsim.logging_config import setup_logging

    setup_logging()
    _worker_dataset = dataset


def _run_in_worker(config: SimConfig) -> SimulationTrace:
    return run_simulation(_worker_dataset, config)


def _fail(config: SimConfig, error: BaseException) -> GridRunError:
    logger.error(
        "grid_run_failed",
        condition=config.condition.value,
        algorithm=config.algorithm.value,
        seed=config.seed,
        error=str(error),
    )
    return GridRunError(config.condition.value, config.algorithm.value, config.seed, str(error))


def run_traces(
    dataset: LabeledDataset, grid: ExperimentGrid, workers: Optional[int] = None
) -> List[SimulationTrace]:
    """Run every grid cell; traces come back in run_configs order."""
    configs = grid.run_configs()
    workers = workers or grid.workers
    logger.info("grid_started", runs=len(configs), workers=workers)

    traces: List[SimulationTrace] = []
    if workers == 1:
        for config in configs:
            try:
                traces.append(run_simulation(dataset, config))
            except Exception as e:
                raise _fail(config, e) from e
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(dataset,)
        ) as pool:
            futures = [pool.submit(_run_in_worker, config) for config in configs]
            for config, future in zip(configs, futures):
                try:
                    traces.append(future.result())
                except Exception as e:
                    for pending in futures:
                        pending.cancel()
                    raise _fail(config, e) from e

    logger.info("grid_finished", runs=len(traces))
    return traces


@dataclass
class GridResult:
    traces: List[SimulationTrace]
    result: "AggregateResult"


def run_grid(
    dataset: LabeledDataset, grid: ExperimentGrid, workers: Optional[int] = None
) -> GridResult:
    traces = run_traces(dataset, grid, workers)
    return GridResult(traces, aggregate(traces, grid.eval_cycles))


# =============================================================================
# AGGREGATION
# =============================================================================

@dataclass(frozen=True)
class ResultRow:
    condition: Condition
    algorithm: AlgorithmKind
    stakeholder: Stakeholder
    group: Group
    mean_utility: float
    pct_delta: Optional[float]
    seeds: int = 0


@dataclass
class AggregateResult:
    rows: List[ResultRow] = field(default_factory=list)
    eval_cycles: int = 5

    def for_stakeholder(self, stakeholder: Stakeholder) -> List[ResultRow]:
        return [r for r in self.rows if r.stakeholder == stakeholder]

    def get(
        self, condition: Condition | str, algorithm: AlgorithmKind | str,
        stakeholder: Stakeholder | str, group: Group | str,
    ) -> Optional[ResultRow]:
        key = (Condition(condition), AlgorithmKind(algorithm), Stakeholder(stakeholder), Group(group))
        for row in self.rows:
            if (row.condition, row.algorithm, row.stakeholder, row.group) == key:
                return row
        return None

    def as_records(self) -> List[Dict[str, object]]:
        return [
            {
                "condition": r.condition.value,
                "algorithm": r.algorithm.value,
                "stakeholder": r.stakeholder.value,
                "group": r.group.value,
                "mean_utility": r.mean_utility,
                "pct_delta_vs_baseline": r.pct_delta,
            }
            for r in self.rows
        ]

    def digest(self) -> str:
        return digest(self.as_records())


RowKey = Tuple[Condition, AlgorithmKind, Stakeholder, Group]


def row_order(key: RowKey) -> Tuple[int, int, int, int]:
    """Result row order: algorithm, then condition, stakeholder and group in enum order."""
    condition, algorithm, stakeholder, group = key
    return (
        list(AlgorithmKind).index(algorithm),
        list(Condition).index(condition),
        list(Stakeholder).index(stakeholder),
        list(Group).index(group),
    )


def pct_delta(value: float, baseline: Optional[float]) -> Optional[float]:
    """Percent difference from baseline; undefined when the baseline is not positive."""
    if baseline is None or baseline <= 0:
        return None
    return 100.0 * (value - baseline) / baseline


def format_delta(delta: Optional[float]) -> str:
    return "n/a" if delta is None else f"{delta:+.1f}%"


def _window(trace: SimulationTrace, eval_cycles: int):
    if len(trace.cycles) < eval_cycles:
        raise ConfigurationError(
            f"trace {trace.config.run_id} has {len(trace.cycles)} cycles, fewer than eval_cycles={eval_cycles}"
        )
    return trace.cycles[-eval_cycles:]


def _group_means(
    per_entity: Mapping[str, float], labels: Mapping[str, Group]
) -> Dict[Group, float]:
    """Mean over the members of each group; empty groups are omitted."""
    means: Dict[Group, float] = {}
    for group in Group:
        values = [per_entity[e] for e in sorted(per_entity) if labels[e] == group]
        if values:
            means[group] = float(np.mean(values))
    return means


def trace_group_means(
    trace: SimulationTrace,
    eval_cycles: int,
    consumer_labels: Optional[Mapping[str, Group]] = None,
    provider_labels: Optional[Mapping[str, Group]] = None,
) -> Dict[Tuple[Stakeholder, Group], float]:
    """Per-group means for one run: each consumer/provider first averaged over the window."""
    window = _window(trace, eval_cycles)
    consumers = sorted(window[0].utilities)
    providers = sorted(window[0].provider_clicks)
    consumer_means = {c: float(np.mean([r.utilities[c] for r in window])) for c in consumers}
    provider_means = {p: float(np.mean([r.provider_clicks[p] for r in window])) for p in providers}

    out: Dict[Tuple[Stakeholder, Group], float] = {}
    for group, value in _group_means(consumer_means, consumer_labels or trace.consumer_groups).items():
        out[(Stakeholder.CONSUMER, group)] = value
    for group, value in _group_means(provider_means, provider_labels or trace.provider_groups).items():
        out[(Stakeholder.PROVIDER, group)] = value
    return out


def aggregate(
    traces: Iterable[SimulationTrace],
    eval_cycles: int = 5,
    consumer_labels: Optional[Mapping[str, Group]] = None,
    provider_labels: Optional[Mapping[str, Group]] = None,
) -> AggregateResult:
    """
    Macro-average: consumer (or provider) over the evaluation window, then
    group, then across seeds. Deltas compare against the baseline of the same
    algorithm.
    """
    per_seed: Dict[Tuple[Condition, AlgorithmKind, Stakeholder, Group], Dict[int, float]] = {}
    for trace in traces:
        means = trace_group_means(trace, eval_cycles, consumer_labels, provider_labels)
        for (stakeholder, group), value in means.items():
            key = (trace.condition, trace.algorithm, stakeholder, group)
            per_seed.setdefault(key, {})[trace.seed] = value

    means = {
        key: float(np.mean([seeds[s] for s in sorted(seeds)])) for key, seeds in per_seed.items()
    }
    rows = []
    for key in sorted(means, key=row_order):
        condition, algorithm, stakeholder, group = key
        baseline = means.get((Condition.BASELINE, algorithm, stakeholder, group))
        rows.append(ResultRow(
            condition=condition,
            algorithm=algorithm,
            stakeholder=stakeholder,
            group=group,
            mean_utility=means[key],
            pct_delta=pct_delta(means[key], baseline),
            seeds=len(per_seed[key]),
        ))
    return AggregateResult(rows=rows, eval_cycles=eval_cycles)


@dataclass(frozen=True)
class TrajectoryRow:
    condition: Condition
    algorithm: AlgorithmKind
    stakeholder: Stakeholder
    group: Group
    cycle: int
    mean_utility: float


def trajectories(traces: Iterable[SimulationTrace]) -> List[TrajectoryRow]:
    """Per-cycle group means, averaged across seeds."""
    per_seed: Dict[Tuple[Condition, AlgorithmKind, Stakeholder, Group, int], Dict[int, float]] = {}
    for trace in traces:
        for record in trace.cycles:
            consumer = _group_means(record.utilities, trace.consumer_groups)
            provider = _group_means(
                {p: float(c) for p, c in record.provider_clicks.items()}, trace.provider_groups
            )
            for stakeholder, means in ((Stakeholder.CONSUMER, consumer), (Stakeholder.PROVIDER, provider)):
                for group, value in means.items():
                    key = (trace.condition, trace.algorithm, stakeholder, group, record.cycle)
                    per_seed.setdefault(key, {})[trace.seed] = value

    rows = [
        TrajectoryRow(*key, mean_utility=float(np.mean([seeds[s] for s in sorted(seeds)])))
        for key, seeds in per_seed.items()
    ]
    rows.sort(key=lambda r: (
        list(AlgorithmKind).index(r.algorithm), list(Condition).index(r.condition),
        list(Stakeholder).index(r.stakeholder), list(Group).index(r.group), r.cycle,
    ))
    return rows


def summary_table(result: AggregateResult, stakeholder: Stakeholder | str) -> str:
    """Text table of group means with percent-deltas, one row per algorithm and group."""
    stakeholder = Stakeholder(stakeholder)
    rows = result.for_stakeholder(stakeholder)
    conditions = [c for c in Condition if any(r.condition == c for r in rows)]
    header = ["algorithm", "group", *(c.value for c in conditions)]
    lines = [header]
    seen: List[Tuple[AlgorithmKind, Group]] = []
    for row in rows:
        if (row.algorithm, row.group) not in seen:
            seen.append((row.algorithm, row.group))
    for algorithm, group in seen:
        cells = [algorithm.value, group.value]
        for condition in conditions:
            row = result.get(condition, algorithm, stakeholder, group)
            if row is None:
                cells.append("-")
            elif condition == Condition.BASELINE:
                cells.append(f"{row.mean_utility:.3f}")
            else:
                cells.append(f"{row.mean_utility:.3f} ({format_delta(row.pct_delta)})")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in lines
    )
