"""
portsim Metrics
Prometheus counters for simulation runs.
"""
import time
from functools import wraps
from pathlib import Path
from typing import Optional

import structlog
from prometheus_client import CollectorRegistry, Counter, Histogram, Info, write_to_textfile

import portsim

logger = structlog.get_logger()

REGISTRY = CollectorRegistry()


# Counters
RUNS_TOTAL = Counter(
    'portsim_runs_total',
    'Total simulation runs completed',
    ['condition', 'algorithm'],
    registry=REGISTRY,
)

SWITCHES_TOTAL = Counter(
    'portsim_switches_total',
    'Total recommender switches applied',
    ['condition', 'from_recommender', 'to_recommender'],
    registry=REGISTRY,
)

SKIPPED_DAYS_TOTAL = Counter(
    'portsim_skipped_days_total',
    'Consumer-days skipped because no candidate items remained',
    ['recommender'],
    registry=REGISTRY,
)

CLICKS_TOTAL = Counter(
    'portsim_clicks_total',
    'Total clicks recorded',
    ['recommender'],
    registry=REGISTRY,
)


# Histograms
RUN_DURATION = Histogram(
    'portsim_run_duration_seconds',
    'Wall-clock duration of one simulation run',
    ['algorithm'],
    buckets=[0.5, 1, 2, 5, 10, 30, 60, 120, 300],
    registry=REGISTRY,
)

TRAIN_DURATION = Histogram(
    'portsim_train_duration_seconds',
    'Recommender training duration',
    ['algorithm'],
    buckets=[0.01, 0.05, 0.1, 0.5, 1, 5, 10],
    registry=REGISTRY,
)


PORTSIM_INFO = Info('portsim', 'portsim build information', registry=REGISTRY)


class MetricsCollector:
    """Centralized metrics collection."""

    def __init__(self):
        PORTSIM_INFO.info({'version': portsim.__version__})

    def record_run(self, condition: str, algorithm: str, duration_seconds: float):
        RUNS_TOTAL.labels(condition=condition, algorithm=algorithm).inc()
        RUN_DURATION.labels(algorithm=algorithm).observe(duration_seconds)

    def record_switch(self, condition: str, from_recommender: str, to_recommender: str):
        SWITCHES_TOTAL.labels(
            condition=condition, from_recommender=from_recommender, to_recommender=to_recommender
        ).inc()

    def record_skipped_day(self, recommender: str):
        SKIPPED_DAYS_TOTAL.labels(recommender=recommender).inc()

    def record_clicks(self, recommender: str, count: int):
        if count > 0:
            CLICKS_TOTAL.labels(recommender=recommender).inc(count)

    def record_training(self, algorithm: str, duration_seconds: float):
        TRAIN_DURATION.labels(algorithm=algorithm).observe(duration_seconds)

    def write(self, path: str | Path):
        """Write the text exposition format to a file."""
        write_to_textfile(str(path), REGISTRY)
        logger.info("metrics_written", path=str(path))


def timed(algorithm_attr: str = "algorithm"):
    """Record the wrapped training call's duration under the instance's algorithm."""
    def decorator(func):
        @wraps(func)
        def wrapper(instance, *args, **kwargs):
            start = time.perf_counter()
            try:
                return func(instance, *args, **kwargs)
            finally:
                algo = getattr(instance, algorithm_attr, None)
                label = getattr(algo, "value", str(algo))
                metrics.record_training(label, time.perf_counter() - start)
        return wrapper
    return decorator


# Global metrics collector
metrics = MetricsCollector()


def write_metrics(path: Optional[str | Path]):
    if path:
        metrics.write(path)
