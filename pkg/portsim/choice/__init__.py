"""
portsim Consumer Choice
Utilities, softmax click selection, provider credit and switch decisions.
"""
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import softmax

from portsim.ecosystem import ConsumerState, ContractViolation, ItemRecord, ProviderState
from portsim.recommenders import Slate


class UtilityParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = Field(2.0, ge=0)
    tau: float = Field(0.2, gt=0, lt=1)
    softmax_temperature: float = Field(1.0, gt=0)


@dataclass(frozen=True)
class DailyOutcome:
    consumer_id: str
    recommender_id: str
    slate: Slate
    selected: str
    slate_utility: float
    running_utility: float

    def __post_init__(self):
        if self.selected not in self.slate.items:
            raise ContractViolation(f"selected item {self.selected!r} is not in the slate")


def instantaneous_item_utility(features: np.ndarray, preferences: np.ndarray) -> float:
    """Genre match normalized by the item's feature-set size."""
    nnz = int(np.count_nonzero(features))
    if nnz == 0:
        raise ContractViolation("item feature vector is empty")
    return float(np.dot(features, preferences)) / nnz


def item_utilities(
    slate: Sequence[str], items: Mapping[str, ItemRecord], preferences: np.ndarray
) -> np.ndarray:
    return np.array([instantaneous_item_utility(items[i].features, preferences) for i in slate])


def selection_probabilities(utilities: Sequence[float], temperature: float = 1.0) -> np.ndarray:
    values = np.asarray(utilities, dtype=float)
    if values.size == 0:
        raise ContractViolation("cannot choose from an empty slate")
    if temperature <= 0:
        raise ContractViolation("softmax temperature must be positive")
    # scipy's softmax subtracts the max internally
    return softmax(values / temperature)


def select_item(slate: Sequence[str], probabilities: np.ndarray, rng: np.random.Generator) -> str:
    items = list(slate)
    if len(items) != len(probabilities):
        raise ContractViolation("probabilities do not align with the slate")
    if abs(float(np.sum(probabilities)) - 1.0) > 1e-9:
        raise ContractViolation("probabilities must sum to 1")
    return items[int(rng.choice(len(items), p=probabilities))]


def slate_utility(
    slate: Sequence[str], items: Mapping[str, ItemRecord], preferences: np.ndarray
) -> float:
    if len(slate) == 0:
        raise ContractViolation("slate utility of an empty slate")
    return float(np.mean(item_utilities(slate, items, preferences)))


def update_running_utility(previous: float, current: float, beta: float) -> float:
    return (previous * beta + current) / (1.0 + beta)


def switch_decision(
    consumer: ConsumerState, tau: float, roster: Optional[Sequence[str]] = None
) -> Optional[str]:
    """
    Target recommender for an unhappy consumer, or None.

    Fires only when the attached estimate is below tau; the best alternative
    must be estimated at least as high as the attached one. Ties go to the
    earlier recommender in roster order.
    """
    attached = consumer.utility_estimates[consumer.attached]
    if attached >= tau:
        return None
    ordered = roster if roster is not None else sorted(consumer.utility_estimates)
    best, best_estimate = None, -np.inf
    for rid in ordered:
        if rid == consumer.attached:
            continue
        estimate = consumer.utility_estimates[rid]
        if estimate > best_estimate:
            best, best_estimate = rid, estimate
    if best is None or best_estimate < attached:
        return None
    return best


def update_provider_utility(
    providers: Mapping[str, ProviderState], item: ItemRecord, cycle: Optional[int] = None
) -> Mapping[str, ProviderState]:
    """Credit one click to the item's provider in the open cycle."""
    provider = providers.get(item.provider)
    if provider is None:
        raise ContractViolation(f"unknown provider {item.provider!r} for item {item.id!r}")
    if cycle is not None and len(provider.clicks_per_cycle) != cycle:
        raise ContractViolation(f"provider {provider.id} is not in cycle {cycle}")
    provider.record_click()
    return providers
