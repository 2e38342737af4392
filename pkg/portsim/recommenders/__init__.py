"""
portsim Recommenders
Per-cycle training, scoring and slate assembly for the generic and niche recommenders.

A recommender ranks the first slate_size - 1 positions with its trained model
and fills the last one by popularity sampling. Two fallbacks apply:
an Untrained model (too few consumers) samples the ranked positions from
popularity, and a consumer with no usable profile is ranked by popularity.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Type

import numpy as np
import structlog
from scipy import sparse

from portsim.ecosystem import ClickEvent, ItemRecord
from portsim.metrics import timed
from portsim.recommenders.als import ALSModel
from portsim.recommenders.base import (
    AlgorithmKind,
    EmptySlateError,
    ItemCatalog,
    Provenance,
    RankingModel,
    RecommenderParams,
    Slate,
    popularity_sample,
    weighted_sample_without_replacement,
)
from portsim.recommenders.bpr import BPRModel
from portsim.recommenders.knn import ItemKNNModel

logger = structlog.get_logger()

DEFAULT_SLATE_SIZE = 5

MODEL_REGISTRY: Dict[AlgorithmKind, Type[RankingModel]] = {
    AlgorithmKind.ALS: ALSModel,
    AlgorithmKind.BPR: BPRModel,
    AlgorithmKind.ITEMKNN: ItemKNNModel,
}

__all__ = [
    "AlgorithmKind",
    "EmptySlateError",
    "ItemCatalog",
    "MODEL_REGISTRY",
    "Provenance",
    "RecommenderInstance",
    "RecommenderParams",
    "Slate",
    "create_recommender",
    "popularity_sample",
    "recommend",
    "score",
    "train",
]


@dataclass
class RecommenderInstance:
    id: str
    algorithm: AlgorithmKind
    catalog: ItemCatalog
    candidate_mask: np.ndarray
    params: RecommenderParams = field(default_factory=RecommenderParams)
    model: Optional[RankingModel] = None
    consumer_index: Dict[str, int] = field(default_factory=dict)
    popularity: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.popularity is None:
            self.popularity = self.candidate_mask.astype(float)

    @property
    def trained(self) -> bool:
        return self.model is not None

    @property
    def popularity_weights(self) -> Dict[str, float]:
        """Smoothed click counts over filter-passing items."""
        return {
            self.catalog.item_ids[pos]: float(self.popularity[pos])
            for pos in np.flatnonzero(self.candidate_mask)
        }

    def passes(self, item_id: str) -> bool:
        pos = self.catalog.index.get(item_id)
        return pos is not None and bool(self.candidate_mask[pos])


def create_recommender(
    recommender_id: str,
    algorithm: AlgorithmKind | str,
    items: Mapping[str, ItemRecord] | ItemCatalog,
    params: Optional[RecommenderParams] = None,
    niche_index: Optional[int] = None,
) -> RecommenderInstance:
    """
    Build an Untrained recommender. With niche_index set the candidate filter
    keeps only items carrying that genre.
    """
    catalog = items if isinstance(items, ItemCatalog) else ItemCatalog.from_items(items)
    if niche_index is None:
        mask = np.ones(len(catalog), dtype=bool)
    else:
        mask = catalog.features[:, niche_index] > 0
    return RecommenderInstance(
        id=recommender_id,
        algorithm=AlgorithmKind(algorithm),
        catalog=catalog,
        candidate_mask=mask,
        params=params or RecommenderParams(),
    )


def _click_matrix(
    catalog: ItemCatalog, partition: Mapping[str, Sequence[ClickEvent]]
) -> Tuple[sparse.csr_matrix, Dict[str, int]]:
    consumers = sorted(c for c, events in partition.items() if events)
    consumer_index = {c: row for row, c in enumerate(consumers)}
    rows, cols = [], []
    for consumer in consumers:
        for event in partition[consumer]:
            rows.append(consumer_index[consumer])
            cols.append(catalog.index[event.item_id])
    data = np.ones(len(rows))
    # duplicates sum into click counts
    matrix = sparse.coo_matrix(
        (data, (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(len(consumers), len(catalog)),
    ).tocsr()
    return matrix, consumer_index


@timed()
def train(
    instance: RecommenderInstance,
    partition: Mapping[str, Sequence[ClickEvent]],
    rng: np.random.Generator,
) -> RecommenderInstance:
    """Fit a fresh model on the recommender's visible partition."""
    matrix, consumer_index = _click_matrix(instance.catalog, partition)
    clicks = np.asarray(matrix.sum(axis=0)).ravel()
    popularity = np.where(instance.candidate_mask, clicks + 1.0, 0.0)

    model = None
    if consumer_index and len(consumer_index) >= instance.params.min_train_consumers:
        model = MODEL_REGISTRY[instance.algorithm].fit(
            matrix, instance.candidate_mask, instance.params, rng
        )
    else:
        logger.debug(
            "recommender_untrained",
            recommender=instance.id,
            consumers=len(consumer_index),
            min_train_consumers=instance.params.min_train_consumers,
        )
    return dataclasses.replace(
        instance, model=model, consumer_index=consumer_index, popularity=popularity
    )


def _profile_positions(instance: RecommenderInstance, profile: Iterable[ClickEvent | str]) -> np.ndarray:
    ids = {getattr(event, "item_id", event) for event in profile}
    return np.sort(instance.catalog.positions(i for i in ids if i in instance.catalog.index))


def _score_positions(
    instance: RecommenderInstance,
    consumer_id: str,
    candidates: np.ndarray,
    profile: Iterable[ClickEvent | str],
) -> Tuple[np.ndarray, bool]:
    """Scores for candidate columns and whether they are personalized."""
    profile_idx = _profile_positions(instance, profile)
    if instance.model is not None and len(profile_idx):
        scores = instance.model.score(
            instance.consumer_index.get(consumer_id), profile_idx, candidates
        )
        if scores is not None:
            return np.asarray(scores, dtype=float), True
    return instance.popularity[candidates].astype(float), False


def score(
    instance: RecommenderInstance,
    consumer_id: str,
    candidates: Iterable[str],
    profile: Iterable[ClickEvent | str] = (),
) -> Dict[str, float]:
    items = sorted(set(candidates))
    positions = instance.catalog.positions(items)
    scores, _ = _score_positions(instance, consumer_id, positions, profile)
    return {item: float(value) for item, value in zip(items, scores)}


def recommend(
    instance: RecommenderInstance,
    consumer_id: str,
    exclusions: Iterable[str],
    rng: np.random.Generator,
    profile: Iterable[ClickEvent | str] = (),
    slate_size: int = DEFAULT_SLATE_SIZE,
) -> Slate:
    mask = instance.candidate_mask.copy()
    for item_id in exclusions:
        pos = instance.catalog.index.get(item_id)
        if pos is not None:
            mask[pos] = False
    candidates = np.flatnonzero(mask)
    if len(candidates) == 0:
        raise EmptySlateError(f"no candidates for consumer {consumer_id!r} at {instance.id!r}")

    n_ranked = min(slate_size - 1, len(candidates))
    if instance.model is None:
        picked = weighted_sample_without_replacement(instance.popularity[candidates], n_ranked, rng)
        ranked = candidates[picked]
        provenance = Provenance.FALLBACK
    else:
        scores, personalized = _score_positions(instance, consumer_id, candidates, profile)
        order = np.lexsort((candidates, -scores))[:n_ranked]
        ranked = candidates[order]
        provenance = Provenance.RANKED if personalized else Provenance.FALLBACK

    items = [instance.catalog.item_ids[pos] for pos in ranked]
    tags = [provenance] * len(items)

    remaining = np.setdiff1d(candidates, ranked)
    if len(items) < slate_size and len(remaining):
        weights = {instance.catalog.item_ids[pos]: instance.popularity[pos] for pos in remaining}
        items.append(popularity_sample(weights, (), rng))
        tags.append(Provenance.POPULARITY_SAMPLE)
    return Slate(tuple(items), tuple(tags))
