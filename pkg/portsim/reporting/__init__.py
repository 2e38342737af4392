"""
portsim Reporting
Result tables, the run manifest and per-group utility plots.
"""
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import orjson  # noqa: E402
import pandas as pd  # noqa: E402
import structlog  # noqa: E402

import portsim  # noqa: E402
from portsim.dataset import Group  # noqa: E402
from portsim.engine import SimulationTrace  # noqa: E402
from portsim.experiments import (  # noqa: E402
    AggregateResult,
    ResultRow,
    Stakeholder,
    row_order,
    trajectories,
)
from portsim.portability import Condition  # noqa: E402
from portsim.recommenders import AlgorithmKind  # noqa: E402
from portsim.utils import digest  # noqa: E402

logger = structlog.get_logger()

RESULT_COLUMNS = ["condition", "algorithm", "group", "mean_utility", "pct_delta_vs_baseline"]
RESULT_FILES = {
    Stakeholder.CONSUMER: "consumer_utility.csv",
    Stakeholder.PROVIDER: "provider_utility.csv",
}
TRAJECTORY_FILE = "utility_trajectories.csv"
MANIFEST_FILE = "manifest.json"

METRIC_DEFINITIONS = {
    Stakeholder.CONSUMER.value: "running utility per consumer averaged over the evaluation window, "
                                "then over group members, then over seeds",
    Stakeholder.PROVIDER.value: "clicks per provider per cycle averaged over the evaluation window, "
                                "then over group members, then over seeds",
}

GROUP_COLORS = {Group.NICHE: "#c0392b", Group.GENERIC: "#2c3e50"}


class ReportIOError(OSError):
    """Output directory cannot be written."""


def _ensure_writable(out_dir: Path) -> Path:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"cannot create output directory {out_dir}: {e}") from e
    if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
        raise ReportIOError(f"output directory {out_dir} is not writable")
    return out_dir


def results_frame(result: AggregateResult, stakeholder: Stakeholder) -> pd.DataFrame:
    rows = result.for_stakeholder(stakeholder)
    return pd.DataFrame(
        {
            "condition": [r.condition.value for r in rows],
            "algorithm": [r.algorithm.value for r in rows],
            "group": [r.group.value for r in rows],
            "mean_utility": [r.mean_utility for r in rows],
            "pct_delta_vs_baseline": [r.pct_delta for r in rows],
        },
        columns=RESULT_COLUMNS,
    )


def read_results(out_dir: str | Path, eval_cycles: int = 5) -> AggregateResult:
    """Parse exported result CSVs back into an AggregateResult."""
    rows: List[ResultRow] = []
    for stakeholder, name in RESULT_FILES.items():
        frame = pd.read_csv(Path(out_dir) / name, float_precision="round_trip")
        for record in frame.itertuples(index=False):
            delta = record.pct_delta_vs_baseline
            rows.append(ResultRow(
                condition=Condition(record.condition),
                algorithm=AlgorithmKind(record.algorithm),
                stakeholder=stakeholder,
                group=Group(record.group),
                mean_utility=float(record.mean_utility),
                pct_delta=None if pd.isna(delta) else float(delta),
            ))
    rows.sort(key=lambda r: row_order((r.condition, r.algorithm, r.stakeholder, r.group)))
    return AggregateResult(rows=rows, eval_cycles=eval_cycles)


def build_manifest(result: AggregateResult, traces: Sequence[SimulationTrace]) -> Dict[str, object]:
    """Machine-readable description of what produced the results; no timestamps."""
    configs = [t.config for t in traces]
    manifest: Dict[str, object] = {
        "portsim_version": portsim.__version__,
        "conditions": [c.value for c in Condition if any(cfg.condition == c for cfg in configs)],
        "algorithms": [a.value for a in AlgorithmKind if any(cfg.algorithm == a for cfg in configs)],
        "seeds": sorted({cfg.seed for cfg in configs}),
        "runs": sorted(cfg.run_id for cfg in configs),
        "eval_cycles": result.eval_cycles,
        "simulation": (
            configs[0].model_dump(mode="json", exclude={"condition", "algorithm", "seed"})
            if configs else None
        ),
        "dataset_digests": sorted({t.dataset_digest for t in traces if t.dataset_digest}),
        "metrics": METRIC_DEFINITIONS,
        "results_digest": result.digest(),
    }
    manifest["digest"] = digest(manifest)
    return manifest


# =============================================================================
# PLOTS
# =============================================================================

def plot_stakeholder(result: AggregateResult, stakeholder: Stakeholder, path: Path) -> Path:
    """
    One panel per algorithm: bars per (group, condition), baseline drawn as a
    horizontal line across its group's bars.
    """
    rows = result.for_stakeholder(stakeholder)
    algorithms = [a for a in AlgorithmKind if any(r.algorithm == a for r in rows)]
    conditions = [
        c for c in Condition if c != Condition.BASELINE and any(r.condition == c for r in rows)
    ]
    fig, axes = plt.subplots(
        1, max(len(algorithms), 1), figsize=(4.0 * max(len(algorithms), 1), 3.6),
        sharey=True, squeeze=False,
    )
    width = 0.8 / max(len(conditions), 1)

    for ax, algorithm in zip(axes[0], algorithms):
        for g, group in enumerate(Group):
            offsets = g + (np.arange(len(conditions)) - (len(conditions) - 1) / 2) * width
            values = []
            for condition in conditions:
                row = result.get(condition, algorithm, stakeholder, group)
                values.append(row.mean_utility if row else np.nan)
            ax.bar(offsets, values, width=width * 0.9, color=GROUP_COLORS[group], alpha=0.8)
            baseline = result.get(Condition.BASELINE, algorithm, stakeholder, group)
            if baseline is not None:
                ax.hlines(baseline.mean_utility, g - 0.45, g + 0.45,
                          colors="black", linestyles="--", linewidth=1.2)
            for x, condition in zip(offsets, conditions):
                ax.annotate(condition.value.replace("_", "\n"), (x, 0), xytext=(0, -22),
                            textcoords="offset points", ha="center", fontsize=6)
        ax.set_title(algorithm.value)
        ax.set_xticks(range(len(Group)))
        ax.set_xticklabels([g.value for g in Group])
        ax.tick_params(axis="x", pad=26)
        ax.grid(axis="y", alpha=0.3)
    axes[0][0].set_ylabel(f"mean {stakeholder.value} utility")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# =============================================================================
# EXPORT
# =============================================================================

def export_results(
    result: AggregateResult,
    out_dir: str | Path,
    traces: Optional[Sequence[SimulationTrace]] = None,
    plots: bool = False,
) -> List[Path]:
    out_dir = _ensure_writable(Path(out_dir))
    written: List[Path] = []

    for stakeholder, name in RESULT_FILES.items():
        path = out_dir / name
        results_frame(result, stakeholder).to_csv(path, index=False)
        written.append(path)

    if traces:
        rows = trajectories(traces)
        path = out_dir / TRAJECTORY_FILE
        pd.DataFrame(
            {
                "condition": [r.condition.value for r in rows],
                "algorithm": [r.algorithm.value for r in rows],
                "stakeholder": [r.stakeholder.value for r in rows],
                "group": [r.group.value for r in rows],
                "cycle": [r.cycle for r in rows],
                "mean_utility": [r.mean_utility for r in rows],
            }
        ).to_csv(path, index=False)
        written.append(path)

    path = out_dir / MANIFEST_FILE
    path.write_bytes(orjson.dumps(
        build_manifest(result, traces or []), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
    ))
    written.append(path)

    if plots:
        for stakeholder in Stakeholder:
            written.append(plot_stakeholder(result, stakeholder, out_dir / f"{stakeholder.value}_utility.png"))

    logger.info("results_exported", out_dir=str(out_dir), files=[p.name for p in written])
    return written
