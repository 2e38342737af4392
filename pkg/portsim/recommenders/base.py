"""
portsim Recommender Base
Shared types, the ranking-model interface and popularity sampling.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from portsim.ecosystem import ItemRecord


class AlgorithmKind(str, Enum):
    ALS = "als"
    BPR = "bpr"
    ITEMKNN = "itemknn"


class Provenance(str, Enum):
    RANKED = "ranked"
    POPULARITY_SAMPLE = "popularity_sample"
    FALLBACK = "fallback"


class EmptySlateError(RuntimeError):
    """No recommendable item remains for the consumer."""


class RecommenderParams(BaseModel):
    """Hyperparameters; defaults follow the algorithms' original formulations."""
    model_config = ConfigDict(extra="forbid")

    factors: int = Field(32, ge=1)
    regularization: float = Field(0.1, ge=0)        # ALS L2
    alpha: float = Field(40.0, ge=0)                # ALS confidence scaling
    sweeps: int = Field(15, ge=1)                   # ALS alternating sweeps
    epochs: int = Field(30, ge=1)                   # BPR
    learning_rate: float = Field(0.05, gt=0)        # BPR
    bpr_regularization: float = Field(0.01, ge=0)   # BPR L2
    batch_size: int = Field(256, ge=1)              # BPR
    init_scale: float = Field(0.1, gt=0)
    knn_neighbors: int = Field(50, ge=1)
    min_train_consumers: int = Field(5, ge=0)


@dataclass(frozen=True)
class Slate:
    items: Tuple[str, ...]
    provenance: Tuple[Provenance, ...]

    def __post_init__(self):
        if len(self.items) != len(self.provenance):
            raise ValueError("slate items and provenance must align")
        if len(set(self.items)) != len(self.items):
            raise ValueError("slate contains duplicate items")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class ItemCatalog:
    """Items in ascending id order; positions are the model column indices."""
    item_ids: Tuple[str, ...]
    features: np.ndarray
    index: Dict[str, int] = field(repr=False)

    @classmethod
    def from_items(cls, items: Mapping[str, ItemRecord]) -> "ItemCatalog":
        ids = tuple(sorted(items))
        return cls(
            item_ids=ids,
            features=np.vstack([items[i].features for i in ids]),
            index={item: pos for pos, item in enumerate(ids)},
        )

    def __len__(self) -> int:
        return len(self.item_ids)

    def positions(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.index[i] for i in item_ids), dtype=np.int64)


class RankingModel(ABC):
    """A trained per-cycle ranking model over catalog columns."""

    @classmethod
    @abstractmethod
    def fit(
        cls,
        matrix: sparse.csr_matrix,
        candidate_mask: np.ndarray,
        params: RecommenderParams,
        rng: np.random.Generator,
    ) -> "RankingModel":
        """Fit on a consumers x items click-count matrix."""

    @abstractmethod
    def score(
        self, consumer_row: Optional[int], profile_items: np.ndarray, candidates: np.ndarray
    ) -> Optional[np.ndarray]:
        """Scores for candidate columns, or None when the model cannot personalize."""


def popularity_sample(
    weights: Mapping[str, float], exclusions: Iterable[str], rng: np.random.Generator
) -> str:
    """Draw one item with probability weight / total over non-excluded items."""
    excluded = set(exclusions)
    items = sorted(item for item in weights if item not in excluded)
    if not items:
        raise EmptySlateError("no item left to sample")
    w = np.array([max(float(weights[item]), 0.0) for item in items])
    total = w.sum()
    p = w / total if total > 0 else np.full(len(items), 1.0 / len(items))
    return items[int(rng.choice(len(items), p=p))]


def weighted_sample_without_replacement(
    weights: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Positions drawn without replacement, proportional to weights."""
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    if np.count_nonzero(w) < size:
        w = w + 1.0
    return rng.choice(len(w), size=size, replace=False, p=w / w.sum())
