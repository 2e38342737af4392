"""
portsim Dataset Pipeline
Interaction loading, k-core filtering, genre vectors and niche labeling.
"""
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import orjson
import pandas as pd
import structlog
from pydantic import BaseModel, Field, field_validator
from scipy import sparse

from portsim.utils import digest

logger = structlog.get_logger()

INTERACTION_COLUMNS = ("consumer_id", "item_id", "weight")
CATALOG_COLUMNS = ("item_id", "provider_id", "genres")
GENRE_SEPARATOR = "|"


class Group(str, Enum):
    NICHE = "Niche"
    GENERIC = "Generic"


# =============================================================================
# ERRORS
# =============================================================================

class DatasetError(ValueError):
    """Base class for dataset pipeline failures."""


class DatasetParseError(DatasetError):
    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}, line {line}: {reason}")


class EmptyDatasetError(DatasetError):
    pass


class UnknownGenreError(DatasetError):
    def __init__(self, genre: str):
        self.genre = genre
        super().__init__(f"unknown genre: {genre!r}")


class NicheSelectionError(DatasetError):
    pass


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class RawInteraction:
    consumer_id: str
    item_id: str
    weight: float
    timestamp: Optional[int] = None


@dataclass(frozen=True)
class CatalogEntry:
    item_id: str
    provider_id: str
    genres: Tuple[str, ...]


@dataclass(frozen=True)
class GenreSpace:
    """Ordered genre identifiers; order drives every genre tie-break."""
    genres: Tuple[str, ...]
    niche_index: Optional[int] = None

    def __post_init__(self):
        if len(self.genres) < 2:
            raise DatasetError(f"genre space needs at least 2 genres, got {len(self.genres)}")
        if len(set(self.genres)) != len(self.genres):
            raise DatasetError("genre space contains duplicate genres")
        if self.niche_index is not None and not 0 <= self.niche_index < len(self.genres):
            raise DatasetError(f"niche index {self.niche_index} out of range")

    @classmethod
    def from_catalog(cls, catalog: Iterable[CatalogEntry]) -> "GenreSpace":
        return cls(tuple(sorted({g for entry in catalog for g in entry.genres})))

    @property
    def niche_genre(self) -> Optional[str]:
        return None if self.niche_index is None else self.genres[self.niche_index]

    def index(self, genre: str) -> int:
        try:
            return self.genres.index(genre)
        except ValueError:
            raise UnknownGenreError(genre) from None

    def with_niche(self, genre: str) -> "GenreSpace":
        return GenreSpace(self.genres, self.index(genre))

    def __len__(self) -> int:
        return len(self.genres)


@dataclass
class RawDataset:
    """Loaded but unfiltered, unlabeled dataset."""
    interactions: List[RawInteraction]
    catalog: List[CatalogEntry]
    dropped_catalog_rows: int = 0
    dropped_interaction_rows: int = 0


@dataclass
class LabeledDataset:
    interactions: List[RawInteraction]
    catalog: List[CatalogEntry]
    genre_space: GenreSpace
    consumer_labels: Dict[str, Group]
    provider_labels: Dict[str, Group]
    item_features: Dict[str, np.ndarray] = field(default_factory=dict)
    preferences: Dict[str, np.ndarray] = field(default_factory=dict)
    k_core: int = 1

    @property
    def consumers(self) -> List[str]:
        return sorted(self.consumer_labels)

    @property
    def providers(self) -> List[str]:
        return sorted(self.provider_labels)

    @property
    def niche_genre(self) -> str:
        return self.genre_space.niche_genre


@dataclass
class DatasetStatistics:
    """Dataset statistics with niche breakdowns."""
    k_core: int
    niche_genre: str
    items: int
    niche_items: int
    providers: int
    niche_providers: int
    consumers: int
    niche_consumers: int
    interactions: int
    mean_genre_similarity: float

    @staticmethod
    def _pct(part: int, whole: int) -> float:
        return 100.0 * part / whole if whole else 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "k_core": self.k_core,
            "niche_genre": self.niche_genre,
            "items": self.items,
            "niche_items": self.niche_items,
            "niche_items_pct": self._pct(self.niche_items, self.items),
            "providers": self.providers,
            "niche_providers": self.niche_providers,
            "niche_providers_pct": self._pct(self.niche_providers, self.providers),
            "consumers": self.consumers,
            "niche_consumers": self.niche_consumers,
            "niche_consumers_pct": self._pct(self.niche_consumers, self.consumers),
            "interactions": self.interactions,
            "mean_genre_similarity": self.mean_genre_similarity,
        }


class PipelineConfig(BaseModel):
    k_core: int = Field(5, ge=1)
    niche_genre_override: Optional[str] = None
    percentile_band: Tuple[float, float] = (0.30, 0.80)

    @field_validator("percentile_band")
    @classmethod
    def _check_band(cls, band: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = band
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"percentile band must satisfy 0 <= lo <= hi <= 1, got {band}")
        return band


# =============================================================================
# LOADING
# =============================================================================

_LINE_RE = re.compile(r"line (\d+)")


def _read_frame(path: Path, required: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DatasetError(f"{path} does not exist") from None
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path} is empty") from None
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        raise DatasetParseError(str(path), int(match.group(1)) if match else 0, str(e)) from None

    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetParseError(str(path), 1, f"missing columns {missing}")

    # Short rows come back as NaN even with keep_default_na=False
    short = frame[list(required)].isna().any(axis=1).to_numpy()
    if short.any():
        raise DatasetParseError(str(path), _line_of(short), "too few fields")
    return frame


def _line_of(bad_mask: np.ndarray) -> int:
    # header is line 1, first data row is line 2
    return int(np.flatnonzero(bad_mask)[0]) + 2


def _parse_catalog(path: Path) -> Tuple[List[CatalogEntry], int]:
    frame = _read_frame(path, CATALOG_COLUMNS)
    catalog: List[CatalogEntry] = []
    seen: set = set()
    dropped = 0
    for offset, (item_id, provider_id, genres) in enumerate(
        zip(frame["item_id"], frame["provider_id"], frame["genres"])
    ):
        line = offset + 2
        item_id, provider_id = item_id.strip(), provider_id.strip()
        if not item_id:
            raise DatasetParseError(str(path), line, "empty item_id")
        if item_id in seen:
            raise DatasetParseError(str(path), line, f"duplicate item_id {item_id!r}")
        seen.add(item_id)
        if not provider_id:
            dropped += 1
            continue
        parsed = tuple(dict.fromkeys(g.strip() for g in genres.split(GENRE_SEPARATOR) if g.strip()))
        if not parsed:
            raise DatasetParseError(str(path), line, f"item {item_id!r} has no genres")
        catalog.append(CatalogEntry(item_id, provider_id, parsed))
    return catalog, dropped


def _parse_interactions(path: Path) -> List[RawInteraction]:
    frame = _read_frame(path, INTERACTION_COLUMNS)

    weights = pd.to_numeric(frame["weight"], errors="coerce")
    bad = (weights.isna() | (weights < 0)).to_numpy()
    if bad.any():
        raise DatasetParseError(str(path), _line_of(bad), "weight must be a non-negative number")

    if "timestamp" in frame.columns:
        raw_ts = frame["timestamp"].str.strip()
        ts = pd.to_numeric(raw_ts.where(raw_ts != ""), errors="coerce")
        bad = ((raw_ts != "") & (ts.isna() | (ts % 1 != 0))).to_numpy()
        if bad.any():
            raise DatasetParseError(str(path), _line_of(bad), "timestamp must be an integer epoch")
        timestamps = [None if math.isnan(t) else int(t) for t in ts]
    else:
        timestamps = [None] * len(frame)

    consumers = frame["consumer_id"].str.strip()
    items = frame["item_id"].str.strip()
    bad = ((consumers == "") | (items == "")).to_numpy()
    if bad.any():
        raise DatasetParseError(str(path), _line_of(bad), "empty identifier")

    return [
        RawInteraction(c, i, float(w), t)
        for c, i, w, t in zip(consumers, items, weights, timestamps)
    ]


def load_dataset(interactions_path: str | Path, catalog_path: str | Path) -> RawDataset:
    """Load interactions and catalog CSVs, dropping provider-less items and orphan rows."""
    interactions_path, catalog_path = Path(interactions_path), Path(catalog_path)
    catalog, dropped_catalog = _parse_catalog(catalog_path)
    parsed = _parse_interactions(interactions_path)

    known = {entry.item_id for entry in catalog}
    kept: List[RawInteraction] = []
    seen_keys: set = set()
    unknown = duplicates = 0
    for row in parsed:
        if row.item_id not in known:
            unknown += 1
            continue
        key = (row.consumer_id, row.item_id, row.timestamp)
        if key in seen_keys:
            duplicates += 1
            continue
        seen_keys.add(key)
        kept.append(row)

    if dropped_catalog:
        logger.warning("catalog_rows_dropped", reason="missing_provider", count=dropped_catalog)
    if unknown:
        logger.warning("interaction_rows_dropped", reason="unknown_item", count=unknown)
    if duplicates:
        logger.warning("interaction_rows_dropped", reason="duplicate", count=duplicates)

    if not kept or not catalog:
        raise EmptyDatasetError(
            f"no usable rows in {interactions_path} / {catalog_path} after filtering"
        )

    logger.info("dataset_loaded", interactions=len(kept), items=len(catalog))
    return RawDataset(
        interactions=kept,
        catalog=catalog,
        dropped_catalog_rows=dropped_catalog,
        dropped_interaction_rows=unknown + duplicates,
    )


# =============================================================================
# FILTERING AND FEATURES
# =============================================================================

def k_core_filter(interactions: Sequence[RawInteraction], k: int) -> List[RawInteraction]:
    """
    Maximal subset where every consumer has >= k distinct items and every
    item >= k distinct consumers (fixed point of iterative pruning).
    Input order is preserved.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not interactions:
        return []

    frame = pd.DataFrame(
        {"consumer_id": [r.consumer_id for r in interactions],
         "item_id": [r.item_id for r in interactions]}
    )
    keep = np.ones(len(frame), dtype=bool)
    while True:
        live = frame[keep]
        consumer_degree = live.groupby("consumer_id")["item_id"].nunique()
        item_degree = live.groupby("item_id")["consumer_id"].nunique()
        ok = (
            frame["consumer_id"].map(consumer_degree).ge(k)
            & frame["item_id"].map(item_degree).ge(k)
        ).to_numpy()
        pruned = keep & ok
        if np.array_equal(pruned, keep):
            break
        keep = pruned
    return [row for row, kept in zip(interactions, keep) if kept]


def build_item_features(
    catalog: Sequence[CatalogEntry], genre_space: GenreSpace
) -> Dict[str, np.ndarray]:
    """Binary genre vector f_i per item."""
    features: Dict[str, np.ndarray] = {}
    for entry in catalog:
        vector = np.zeros(len(genre_space))
        for genre in entry.genres:
            vector[genre_space.index(genre)] = 1.0
        features[entry.item_id] = vector
    return features


def build_preference_vectors(
    interactions: Sequence[RawInteraction], item_features: Mapping[str, np.ndarray]
) -> Dict[str, np.ndarray]:
    """Weight-weighted genre histogram per consumer, normalized to sum to 1."""
    if not interactions:
        return {}
    item_ids = sorted(item_features)
    item_codes = {item: idx for idx, item in enumerate(item_ids)}
    missing = {r.item_id for r in interactions} - item_codes.keys()
    if missing:
        raise DatasetError(f"interactions reference items without features: {sorted(missing)[:5]}")

    consumer_codes, consumers = pd.factorize(pd.Series([r.consumer_id for r in interactions]))
    weights = sparse.coo_matrix(
        (
            np.array([r.weight for r in interactions], dtype=float),
            (consumer_codes, np.array([item_codes[r.item_id] for r in interactions])),
        ),
        shape=(len(consumers), len(item_ids)),
    ).tocsr()
    features = np.vstack([item_features[item] for item in item_ids])
    histogram = np.asarray(weights @ features)

    totals = histogram.sum(axis=1)
    zero = np.flatnonzero(totals <= 0)
    if zero.size:
        raise DatasetError(f"consumer {consumers[zero[0]]!r} has zero total interaction weight")

    normalized = histogram / totals[:, None]
    return {consumer: normalized[idx] for idx, consumer in enumerate(consumers)}


# =============================================================================
# NICHE LABELING
# =============================================================================

def genre_supply_demand(
    interactions: Sequence[RawInteraction],
    catalog: Sequence[CatalogEntry],
    genre_space: GenreSpace,
) -> Tuple[np.ndarray, np.ndarray]:
    """Raw per-genre supply (sqrt(providers x items)) and demand (interaction weight)."""
    features = build_item_features(catalog, genre_space)
    item_count = np.zeros(len(genre_space))
    provider_genres: Dict[str, np.ndarray] = {}
    for entry in catalog:
        f = features[entry.item_id]
        item_count += f
        provider_genres[entry.provider_id] = np.maximum(
            provider_genres.get(entry.provider_id, np.zeros(len(genre_space))), f
        )
    provider_count = (
        np.sum(list(provider_genres.values()), axis=0)
        if provider_genres else np.zeros(len(genre_space))
    )
    supply = np.sqrt(provider_count * item_count)

    demand = np.zeros(len(genre_space))
    for row in interactions:
        f = features.get(row.item_id)
        if f is not None:
            demand += row.weight * f
    return supply, demand


def select_niche_genre(
    interactions: Sequence[RawInteraction],
    catalog: Sequence[CatalogEntry],
    genre_space: GenreSpace,
    percentile_band: Tuple[float, float] = (0.30, 0.80),
) -> str:
    """
    Genre with the largest demand-share minus supply-share among genres whose
    demand share falls inside the percentile band. Ties go to genre order.
    """
    supply, demand = genre_supply_demand(interactions, catalog, genre_space)
    active = supply > 0
    if active.sum() < 2:
        raise NicheSelectionError("need at least 2 genres with nonzero supply")
    if demand[active].sum() <= 0:
        raise NicheSelectionError("no interaction weight on any supplied genre")

    supply_share = np.where(active, supply / supply[active].sum(), 0.0)
    demand_share = np.where(active, demand / demand[active].sum(), 0.0)
    lo, hi = np.percentile(demand_share[active], [100 * percentile_band[0], 100 * percentile_band[1]])
    tol = 1e-12
    candidates = [
        g for g in range(len(genre_space))
        if active[g] and lo - tol <= demand_share[g] <= hi + tol
    ]
    if not candidates:
        raise NicheSelectionError(
            "no genre inside the demand percentile band; set niche_genre_override in the config"
        )

    mismatch = demand_share - supply_share
    best = candidates[0]
    for g in candidates[1:]:
        if mismatch[g] > mismatch[best]:
            best = g

    logger.info(
        "niche_genre_selected",
        genre=genre_space.genres[best],
        mismatch=float(mismatch[best]),
        band=(float(lo), float(hi)),
        candidates=len(candidates),
    )
    return genre_space.genres[best]


def label_providers(
    catalog: Sequence[CatalogEntry], genre_space: GenreSpace, niche_genre: str
) -> Dict[str, Group]:
    """Niche iff the genre carried by most of the provider's items is the niche genre."""
    niche = genre_space.index(niche_genre)
    counts: Dict[str, np.ndarray] = {}
    for entry in catalog:
        vector = counts.setdefault(entry.provider_id, np.zeros(len(genre_space)))
        for genre in entry.genres:
            vector[genre_space.index(genre)] += 1
    return {
        provider: Group.NICHE if int(np.argmax(vector)) == niche else Group.GENERIC
        for provider, vector in sorted(counts.items())
    }


def label_consumers(
    preferences: Mapping[str, np.ndarray], genre_space: GenreSpace, niche_genre: str
) -> Dict[str, Group]:
    """Niche iff argmax of p_j is the niche genre (first maximum wins)."""
    niche = genre_space.index(niche_genre)
    return {
        consumer: Group.NICHE if int(np.argmax(p)) == niche else Group.GENERIC
        for consumer, p in sorted(preferences.items())
    }


# =============================================================================
# PIPELINE
# =============================================================================

def label_dataset(
    interactions: Sequence[RawInteraction],
    catalog: Sequence[CatalogEntry],
    config: PipelineConfig,
) -> LabeledDataset:
    """Build features, preferences and labels for an already filtered dataset."""
    genre_space = GenreSpace.from_catalog(catalog)
    if config.niche_genre_override:
        niche = config.niche_genre_override
        genre_space.index(niche)
        logger.info("niche_genre_override", genre=niche)
    else:
        niche = select_niche_genre(interactions, catalog, genre_space, config.percentile_band)
    genre_space = genre_space.with_niche(niche)

    features = build_item_features(catalog, genre_space)
    preferences = build_preference_vectors(interactions, features)
    return LabeledDataset(
        interactions=list(interactions),
        catalog=list(catalog),
        genre_space=genre_space,
        consumer_labels=label_consumers(preferences, genre_space, niche),
        provider_labels=label_providers(catalog, genre_space, niche),
        item_features=features,
        preferences=preferences,
        k_core=config.k_core,
    )


def prepare_dataset(
    interactions_path: str | Path,
    catalog_path: str | Path,
    config: Optional[PipelineConfig] = None,
) -> LabeledDataset:
    """Load, k-core filter and label a dataset."""
    config = config or PipelineConfig()
    raw = load_dataset(interactions_path, catalog_path)
    filtered = k_core_filter(raw.interactions, config.k_core)
    if not filtered:
        raise EmptyDatasetError(f"no interactions survive {config.k_core}-core filtering")
    surviving = {row.item_id for row in filtered}
    catalog = [entry for entry in raw.catalog if entry.item_id in surviving]
    logger.info(
        "k_core_applied",
        k=config.k_core,
        interactions_before=len(raw.interactions),
        interactions_after=len(filtered),
        items=len(catalog),
    )
    return label_dataset(filtered, catalog, config)


def mean_genre_similarity(item_features: Mapping[str, np.ndarray]) -> float:
    """Mean cosine similarity between the genre vectors of distinct item pairs."""
    n = len(item_features)
    if n < 2:
        return 0.0
    matrix = np.vstack(list(item_features.values()))
    unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    total = unit.sum(axis=0)
    # sum over ordered pairs including self-pairs is |total|^2; each self-pair contributes 1
    return float((total @ total - n) / (n * (n - 1)))


def dataset_statistics(dataset: LabeledDataset) -> DatasetStatistics:
    niche = dataset.genre_space.niche_index
    return DatasetStatistics(
        k_core=dataset.k_core,
        niche_genre=dataset.niche_genre,
        items=len(dataset.catalog),
        niche_items=sum(1 for f in dataset.item_features.values() if f[niche] > 0),
        providers=len(dataset.provider_labels),
        niche_providers=sum(1 for g in dataset.provider_labels.values() if g == Group.NICHE),
        consumers=len(dataset.consumer_labels),
        niche_consumers=sum(1 for g in dataset.consumer_labels.values() if g == Group.NICHE),
        interactions=len(dataset.interactions),
        mean_genre_similarity=mean_genre_similarity(dataset.item_features),
    )


def dataset_digest(dataset: LabeledDataset) -> str:
    return digest({
        "interactions": [
            (r.consumer_id, r.item_id, r.weight, r.timestamp) for r in dataset.interactions
        ],
        "catalog": [(e.item_id, e.provider_id, list(e.genres)) for e in dataset.catalog],
        "genres": list(dataset.genre_space.genres),
        "niche_genre": dataset.niche_genre,
    })


# =============================================================================
# PREPARED DIRECTORY
# =============================================================================

def write_inputs(
    interactions: Sequence[RawInteraction], catalog: Sequence[CatalogEntry], out_dir: Path
):
    """Write interactions.csv and catalog.csv in the input formats."""
    pd.DataFrame(
        {
            "consumer_id": [r.consumer_id for r in interactions],
            "item_id": [r.item_id for r in interactions],
            "weight": [r.weight for r in interactions],
            "timestamp": pd.array([r.timestamp for r in interactions], dtype="Int64"),
        }
    ).to_csv(out_dir / "interactions.csv", index=False)
    pd.DataFrame(
        {
            "item_id": [e.item_id for e in catalog],
            "provider_id": [e.provider_id for e in catalog],
            "genres": [GENRE_SEPARATOR.join(e.genres) for e in catalog],
        }
    ).to_csv(out_dir / "catalog.csv", index=False)


def save_prepared(dataset: LabeledDataset, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_inputs(dataset.interactions, dataset.catalog, out_dir)
    meta = {
        "genres": list(dataset.genre_space.genres),
        "niche_genre": dataset.niche_genre,
        "k_core": dataset.k_core,
        "consumer_labels": {c: g.value for c, g in dataset.consumer_labels.items()},
        "provider_labels": {p: g.value for p, g in dataset.provider_labels.items()},
        "statistics": dataset_statistics(dataset).as_dict(),
        "digest": dataset_digest(dataset),
    }
    (out_dir / "dataset.json").write_bytes(
        orjson.dumps(meta, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )
    logger.info("dataset_saved", path=str(out_dir))
    return out_dir


def load_prepared(data_dir: str | Path) -> LabeledDataset:
    data_dir = Path(data_dir)
    meta_path = data_dir / "dataset.json"
    if not meta_path.exists():
        raise DatasetError(f"{data_dir} is not a prepared dataset (missing dataset.json)")
    meta = orjson.loads(meta_path.read_bytes())
    raw = load_dataset(data_dir / "interactions.csv", data_dir / "catalog.csv")
    return label_dataset(
        raw.interactions,
        raw.catalog,
        PipelineConfig(k_core=meta["k_core"], niche_genre_override=meta["niche_genre"]),
    )
