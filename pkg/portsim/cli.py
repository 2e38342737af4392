"""
portsim CLI
Command-line interface: synth, prepare, run, grid and report.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import orjson
import structlog

from portsim.config import ConfigurationError, get_settings, load_config_file, parse_model
from portsim.dataset import DatasetError, PipelineConfig, dataset_statistics, load_prepared, prepare_dataset, save_prepared
from portsim.ecosystem import ContractViolation
from portsim.engine import SimConfig, TraceFormatError, read_traces, run_simulation, trace_digest, trace_filename, write_trace
from portsim.experiments import ExperimentGrid, GridRunError, Stakeholder, aggregate, run_traces, summary_table
from portsim.logging_config import setup_logging
from portsim.metrics import write_metrics
from portsim.reporting import ReportIOError, export_results
from portsim.synth import SynthConfig, write_synthetic

logger = structlog.get_logger()

EXIT_ERROR = 1
EXIT_CONFIG = 2

DOMAIN_ERRORS = (DatasetError, ContractViolation, TraceFormatError, GridRunError, ReportIOError)


def _print_json(payload: Any):
    sys.stdout.write(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS).decode())
    sys.stdout.write("\n")


def _print_tables(result):
    for stakeholder in Stakeholder:
        print(f"\n{stakeholder.value} utility")
        print(summary_table(result, stakeholder))


class PortsimCLI:
    """portsim command handlers."""

    def __init__(self, settings=None):
        self.settings = settings or get_settings()

    def synth(self, args) -> int:
        overrides = {k: v for k, v in (("consumers", args.consumers), ("items", args.items),
                                       ("providers", args.providers)) if v is not None}
        config = parse_model(SynthConfig, overrides, "synthetic config")
        interactions, catalog = write_synthetic(args.out, config, args.seed)
        _print_json({"interactions": str(interactions), "catalog": str(catalog),
                     "niche_genre": config.niche_genre})
        return 0

    def prepare(self, args) -> int:
        config = parse_model(
            PipelineConfig,
            {"k_core": args.k_core, "niche_genre_override": args.niche_genre},
            "pipeline config",
        )
        dataset = prepare_dataset(args.interactions, args.catalog, config)
        save_prepared(dataset, args.out)
        _print_json(dataset_statistics(dataset).as_dict())
        return 0

    def _simulation_config(self, args) -> SimConfig:
        data: Dict[str, Any] = {}
        if getattr(args, "config", None):
            document = load_config_file(args.config)
            data.update(document.get("simulation", document))
        if self.settings.SEED is not None:
            data["seed"] = self.settings.SEED
        for key, value in (
            ("condition", args.condition), ("algorithm", args.algo), ("seed", args.seed),
            ("cycles", args.cycles), ("days_per_cycle", args.days), ("slate_size", args.slate),
            ("tau", args.tau), ("beta", args.beta),
        ):
            if value is not None:
                data[key] = value
        if args.trace_days:
            data["trace_days"] = True
        return parse_model(SimConfig, data, "simulation config")

    def run(self, args) -> int:
        config = self._simulation_config(args)
        dataset = load_prepared(args.data)
        trace = run_simulation(dataset, config)
        path = write_trace(trace, Path(args.out) / trace_filename(config))
        _print_json({"trace": str(path), "digest": trace_digest(trace),
                     "switches": len(trace.switches)})
        return 0

    def grid(self, args) -> int:
        document = load_config_file(args.config)
        grid = parse_model(ExperimentGrid, document, f"grid config {args.config}")
        workers = args.workers or (grid.workers if "workers" in document else self.settings.WORKERS)
        dataset = load_prepared(args.data)
        traces = run_traces(dataset, grid, workers)

        out_dir = Path(args.out)
        for trace in traces:
            write_trace(trace, out_dir / "runs" / trace_filename(trace.config))
        result = aggregate(traces, grid.eval_cycles)
        export_results(result, out_dir, traces, plots=args.plots)
        _print_tables(result)
        return 0

    def report(self, args) -> int:
        traces = read_traces(args.runs)
        if not traces:
            raise ConfigurationError(f"no trace files found in {args.runs}")
        result = aggregate(traces, args.eval_cycles)
        export_results(result, args.out, traces, plots=args.plots)
        _print_tables(result)
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portsim", description="Recommender ecosystem portability simulator")
    parser.add_argument("--log-level", help="Override PORTSIM_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["console", "json"], help="Override PORTSIM_LOG_FORMAT")
    parser.add_argument("--metrics-file", help="Write Prometheus metrics here after the command")

    subparsers = parser.add_subparsers(dest="command", help="Command")

    # Synth
    synth_parser = subparsers.add_parser("synth", help="Generate a synthetic dataset")
    synth_parser.add_argument("--out", required=True, help="Output directory")
    synth_parser.add_argument("--seed", type=int, default=0, help="Generator seed")
    synth_parser.add_argument("--consumers", type=int)
    synth_parser.add_argument("--items", type=int)
    synth_parser.add_argument("--providers", type=int)

    # Prepare
    prepare_parser = subparsers.add_parser("prepare", help="Filter and label a dataset")
    prepare_parser.add_argument("--interactions", required=True, help="Interactions CSV")
    prepare_parser.add_argument("--catalog", required=True, help="Catalog CSV")
    prepare_parser.add_argument("--k-core", type=int, default=5, help="k-core threshold")
    prepare_parser.add_argument("--niche-genre", help="Pin the niche genre")
    prepare_parser.add_argument("--out", required=True, help="Prepared dataset directory")

    # Run
    run_parser = subparsers.add_parser("run", help="Run one simulation")
    run_parser.add_argument("--data", required=True, help="Prepared dataset directory")
    run_parser.add_argument("--condition", help="baseline or a portability policy")
    run_parser.add_argument("--algo", help="als, bpr or itemknn")
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--config", help="JSON config file")
    run_parser.add_argument("--cycles", type=int)
    run_parser.add_argument("--days", type=int)
    run_parser.add_argument("--slate", type=int)
    run_parser.add_argument("--tau", type=float)
    run_parser.add_argument("--beta", type=float)
    run_parser.add_argument("--trace-days", action="store_true", help="Record every consumer-day")
    run_parser.add_argument("--out", required=True, help="Trace output directory")

    # Grid
    grid_parser = subparsers.add_parser("grid", help="Run an experiment grid")
    grid_parser.add_argument("--data", required=True, help="Prepared dataset directory")
    grid_parser.add_argument("--config", required=True, help="Grid config JSON")
    grid_parser.add_argument("--out", required=True, help="Results directory")
    grid_parser.add_argument("--workers", type=int, help="Concurrent runs")
    grid_parser.add_argument("--plots", action="store_true", help="Also write plots")

    # Report
    report_parser = subparsers.add_parser("report", help="Aggregate trace files")
    report_parser.add_argument("--runs", required=True, help="Directory of trace files")
    report_parser.add_argument("--out", required=True, help="Results directory")
    report_parser.add_argument("--eval-cycles", type=int, default=5, help="Evaluation window")
    report_parser.add_argument("--plots", action="store_true", help="Also write plots")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    settings = get_settings()
    json_logs = None if args.log_format is None else args.log_format == "json"
    setup_logging(args.log_level, json_logs)

    cli = PortsimCLI(settings)
    try:
        code = getattr(cli, args.command)(args)
    except ConfigurationError as e:
        logger.error("configuration_error", command=args.command, error=str(e))
        return EXIT_CONFIG
    except DOMAIN_ERRORS as e:
        logger.error("command_failed", command=args.command, error=str(e), error_type=type(e).__name__)
        return EXIT_ERROR
    finally:
        write_metrics(args.metrics_file or settings.METRICS_FILE)
    return code


if __name__ == "__main__":
    sys.exit(main())
