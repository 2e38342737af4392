"""
portsim Synthetic Data
Desk-scale interaction and catalog generator with one under-served niche genre.
"""
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from portsim.dataset import GENRE_SEPARATOR
from portsim.utils import derive_rng

logger = structlog.get_logger()

DEFAULT_GENRES = ["Action", "Comedy", "Documentary", "Drama", "Romance", "Thriller"]


class SynthConfig(BaseModel):
    consumers: int = Field(500, ge=10)
    items: int = Field(200, ge=10)
    providers: int = Field(40, ge=2)
    genres: List[str] = Field(default_factory=lambda: list(DEFAULT_GENRES))
    niche_genre: str = "Romance"
    niche_consumer_share: float = Field(0.05, gt=0, lt=1)
    niche_item_share: float = Field(0.15, gt=0, lt=1)
    niche_provider_share: float = Field(0.15, gt=0, lt=1)
    niche_preference: float = Field(0.7, gt=0, lt=1)
    min_interactions: int = Field(20, ge=5)
    max_interactions: int = Field(40, ge=5)
    second_genre_prob: float = Field(0.3, ge=0, le=1)
    popularity_exponent: float = Field(0.8, ge=0)
    affinity_sharpness: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "SynthConfig":
        if self.niche_genre not in self.genres:
            raise ValueError(f"niche genre {self.niche_genre!r} is not among {self.genres}")
        if len(set(self.genres)) < 3:
            raise ValueError("need the niche genre plus at least 2 other genres")
        if self.min_interactions > self.max_interactions:
            raise ValueError("min_interactions exceeds max_interactions")
        if self.max_interactions > self.items:
            raise ValueError("max_interactions exceeds the catalog size")
        return self

    @property
    def generic_genres(self) -> List[str]:
        return [g for g in self.genres if g != self.niche_genre]


def _ids(prefix: str, n: int) -> List[str]:
    width = len(str(n))
    return [f"{prefix}{i:0{width}d}" for i in range(1, n + 1)]


def _build_catalog(config: SynthConfig, rng: np.random.Generator) -> pd.DataFrame:
    item_ids = _ids("i", config.items)
    provider_ids = _ids("p", config.providers)
    n_niche_items = max(1, round(config.items * config.niche_item_share))
    n_niche_providers = max(1, round(config.providers * config.niche_provider_share))
    generic = config.generic_genres

    rows = []
    for pos, item_id in enumerate(item_ids):
        if pos < n_niche_items:
            provider = provider_ids[pos % n_niche_providers]
            genres = [config.niche_genre]
        else:
            provider = provider_ids[n_niche_providers + pos % (config.providers - n_niche_providers)]
            genres = [generic[int(rng.integers(len(generic)))]]
        if rng.random() < config.second_genre_prob:
            others = [g for g in generic if g not in genres]
            genres.append(others[int(rng.integers(len(others)))])
        rows.append((item_id, provider, GENRE_SEPARATOR.join(sorted(genres))))
    return pd.DataFrame(rows, columns=["item_id", "provider_id", "genres"])


def _consumer_preferences(config: SynthConfig, rng: np.random.Generator) -> Tuple[List[str], np.ndarray]:
    consumer_ids = _ids("u", config.consumers)
    n_niche = max(1, round(config.consumers * config.niche_consumer_share))
    niche = config.genres.index(config.niche_genre)
    others = [g for g in range(len(config.genres)) if g != niche]

    theta = np.zeros((config.consumers, len(config.genres)))
    for row in range(config.consumers):
        spread = rng.dirichlet(np.full(len(others), 0.5))
        if row < n_niche:
            theta[row, niche] = config.niche_preference
            theta[row, others] = (1 - config.niche_preference) * spread
        else:
            theta[row, niche] = 0.02
            theta[row, others] = 0.98 * spread
    return consumer_ids, theta


def generate_synthetic(
    config: SynthConfig | None = None, seed: int = 0
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Interactions and catalog frames in the input CSV layouts.

    Consumers pick distinct items with probability proportional to genre
    affinity (sharpened) times a Zipf-like popularity, so niche items stay
    unpopular overall.
    """
    config = config or SynthConfig()
    catalog = _build_catalog(config, derive_rng(seed, "synth", "catalog"))
    consumer_ids, theta = _consumer_preferences(config, derive_rng(seed, "synth", "consumers"))

    features = np.zeros((len(catalog), len(config.genres)))
    for row, genres in enumerate(catalog["genres"]):
        for genre in genres.split(GENRE_SEPARATOR):
            features[row, config.genres.index(genre)] = 1.0
    affinity = (theta @ features.T) / features.sum(axis=1)

    pop_rng = derive_rng(seed, "synth", "popularity")
    ranks = pop_rng.permutation(len(catalog)) + 1
    popularity = ranks.astype(float) ** -config.popularity_exponent

    records = []
    clock = 0
    for row, consumer in enumerate(consumer_ids):
        rng = derive_rng(seed, "synth", "interactions", consumer)
        weights = (affinity[row] ** config.affinity_sharpness + 1e-3) * popularity
        n = int(rng.integers(config.min_interactions, config.max_interactions + 1))
        picked = rng.choice(len(catalog), size=n, replace=False, p=weights / weights.sum())
        for col in picked:
            noisy = np.clip(affinity[row, col] + rng.normal(0.0, 0.1), 0.0, 1.0)
            clock += 1
            records.append((consumer, catalog.at[col, "item_id"], float(1 + round(4 * noisy)), clock))

    interactions = pd.DataFrame(records, columns=["consumer_id", "item_id", "weight", "timestamp"])
    logger.info(
        "synthetic_generated",
        consumers=len(consumer_ids),
        items=len(catalog),
        providers=catalog["provider_id"].nunique(),
        interactions=len(interactions),
        niche_genre=config.niche_genre,
    )
    return interactions, catalog


def write_synthetic(out_dir: str | Path, config: SynthConfig | None = None, seed: int = 0) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    interactions, catalog = generate_synthetic(config, seed)
    interactions_path = out_dir / "interactions.csv"
    catalog_path = out_dir / "catalog.csv"
    interactions.to_csv(interactions_path, index=False)
    catalog.to_csv(catalog_path, index=False)
    return interactions_path, catalog_path
