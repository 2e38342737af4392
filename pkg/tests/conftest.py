"""Pytest configuration."""
import numpy as np
import pytest
import structlog

from portsim.config import get_settings
from portsim.dataset import CatalogEntry, PipelineConfig, RawInteraction, label_dataset, prepare_dataset
from portsim.synth import SynthConfig, write_synthetic


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Settings are cached per process; tests that touch PORTSIM_* env need a clean cache."""
    monkeypatch.delenv("PORTSIM_SEED", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def reset_structlog():
    """main() configures structlog globally; restore the defaults after each test."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_catalog():
    """Ten items over Action/Comedy/Romance; p3 is the Romance provider."""
    return [
        CatalogEntry("i01", "p1", ("Action",)),
        CatalogEntry("i02", "p1", ("Action", "Comedy")),
        CatalogEntry("i03", "p1", ("Action",)),
        CatalogEntry("i04", "p2", ("Comedy",)),
        CatalogEntry("i05", "p2", ("Comedy",)),
        CatalogEntry("i06", "p2", ("Comedy", "Action")),
        CatalogEntry("i07", "p3", ("Romance",)),
        CatalogEntry("i08", "p3", ("Romance", "Comedy")),
        CatalogEntry("i09", "p3", ("Romance",)),
        CatalogEntry("i10", "p2", ("Action",)),
    ]


@pytest.fixture
def tiny_interactions():
    """Eight consumers; u7 and u8 mostly click Romance."""
    clicks = {
        "u1": ["i01", "i02", "i03", "i10"],
        "u2": ["i01", "i03", "i04", "i10"],
        "u3": ["i04", "i05", "i06", "i02"],
        "u4": ["i04", "i05", "i01", "i06"],
        "u5": ["i01", "i02", "i05", "i10"],
        "u6": ["i03", "i05", "i06", "i04"],
        "u7": ["i07", "i08", "i09", "i01"],
        "u8": ["i07", "i09", "i08", "i04"],
    }
    rows = []
    ts = 0
    for consumer, items in clicks.items():
        for item in items:
            ts += 1
            rows.append(RawInteraction(consumer, item, 1.0, ts))
    return rows


@pytest.fixture
def tiny_dataset(tiny_interactions, tiny_catalog):
    return label_dataset(
        tiny_interactions, tiny_catalog, PipelineConfig(k_core=1, niche_genre_override="Romance")
    )


@pytest.fixture(scope="session")
def small_synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic-small")
    write_synthetic(out, SynthConfig(consumers=60, items=40, providers=8), seed=7)
    return out


@pytest.fixture(scope="session")
def small_dataset(small_synthetic_dir):
    return prepare_dataset(
        small_synthetic_dir / "interactions.csv",
        small_synthetic_dir / "catalog.csv",
        PipelineConfig(k_core=2, niche_genre_override="Romance"),
    )


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic-desk")
    write_synthetic(out, SynthConfig(), seed=0)
    return prepare_dataset(
        out / "interactions.csv",
        out / "catalog.csv",
        PipelineConfig(k_core=5, niche_genre_override="Romance"),
    )
