import argparse
import json
from pathlib import Path
from typing import List, Optional

import structlog
from dateutil import parser as date_parser
from dateutil import tz
from pydantic import ValidationError

from app.config.config import settings
from app.errors import InputOutputError, InvalidArgumentError, InvalidInputError
from app.services import evaluation, pipeline, simulator
from app.services.intensity import read_intensities_csv
from app.services.similarity import DswConfig
from app.services.span_model import SpanFormat, write_spans
from app.services.status_generation import BinningConfig

logger = structlog.get_logger(__name__)


def parse_timestamp_us(value: str) -> int:
    """Integer microseconds since the epoch, or an ISO-8601 timestamp (UTC unless stated)."""
    value = value.strip()
    if value.lstrip("-").isdigit():
        return int(value)
    try:
        moment = date_parser.isoparse(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not a timestamp: {value!r}") from e
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=tz.UTC)
    return int(round(moment.timestamp() * 1_000_000))


def run_config_from_args(args: argparse.Namespace) -> pipeline.RunConfig:
    """
    Build the run configuration, CLI flags taking precedence over settings

    Raises:
        InvalidInputError: a flag value violates a configuration invariant
    """
    bin_size_us = args.bin_size_sec * 1_000_000
    try:
        return pipeline.RunConfig(
            binning=BinningConfig(
                bin_size_us=bin_size_us,
                period_start_us=args.period_start,
                period_end_us=args.period_end,
                smooth_window=args.smooth_window,
            ),
            dsw=DswConfig(rtt_us=args.rtt_us, max_drift_bins=args.max_drift_bins, bin_size_us=bin_size_us),
            method=getattr(args, "method", pipeline.Method.AID),
            indirect_threshold=getattr(args, "indirect_threshold", None),
            jobs=args.jobs,
            span_format=args.span_format,
        )
    except ValidationError as e:
        raise InvalidInputError(f"invalid run configuration: {e}") from e


def cmd_simulate(args: argparse.Namespace) -> int:
    """
    Generate spans.jsonl and labels.csv from a simulation spec

    Args:
        args: Parsed arguments with spec and out

    Returns:
        Exit code
    """
    spec = simulator.load_simulation_spec(args.spec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})

    result = simulator.simulate(spec)

    out_dir = Path(args.out)
    write_spans(result.corpus, out_dir / "spans.jsonl", SpanFormat.JSONL)
    evaluation.write_labels(result.labels, out_dir / "labels.csv")

    logger.info("simulation_written", out_dir=str(out_dir), spans=len(result.corpus), labels=len(result.labels))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    """Predict intensities and write the graph, table and manifest."""
    config = run_config_from_args(args)
    run = pipeline.predict(args.spans, config)
    pipeline.write_prediction_outputs(run, args.out, args.format or pipeline.DEFAULT_FORMATS)
    return 0


def _method_from_manifest(intensities_path: Path) -> str:
    manifest_path = intensities_path.parent / "manifest.json"
    if not manifest_path.is_file():
        return pipeline.Method.AID.value
    try:
        with open(manifest_path, "r", encoding="utf-8") as handle:
            return json.load(handle)["parameters"]["method"]
    except (OSError, ValueError, KeyError, TypeError):
        logger.warning("manifest_unreadable", path=str(manifest_path))
        return pipeline.Method.AID.value


def cmd_evaluate(args: argparse.Namespace) -> int:
    """
    Score an intensity table against labels

    Prints the metric table on stdout and writes report.json.
    """
    intensities_path = Path(args.intensities)
    method = pipeline.Method(args.method or _method_from_manifest(intensities_path))

    predictions = read_intensities_csv(intensities_path)
    labels = evaluation.load_labels(args.labels)
    report = evaluation.evaluate(predictions, labels, method.report_tag, args.ce_epsilon)

    print(evaluation.format_table([report]))
    out = Path(args.out) if args.out else intensities_path.parent / "report.json"
    evaluation.write_report_json([report], out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    """Evaluate every selected method on the same spans and labels."""
    config = run_config_from_args(args)
    methods = [pipeline.Method(method) for method in (args.methods or [m.value for m in pipeline.Method])]

    reports = pipeline.compare_methods(args.spans, args.labels, config, methods)

    print(evaluation.format_table(reports))
    evaluation.write_report_json(reports, Path(args.out) / "report.json", extra={"parameters": config.model_dump(mode="json")})
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    """Evaluate the selected method for each bin size."""
    config = run_config_from_args(args)
    bin_sizes = args.bin_sizes_sec or list(pipeline.DEFAULT_SWEEP_SEC)

    reports = pipeline.sweep_bin_sizes(args.spans, args.labels, config, bin_sizes)

    print(evaluation.format_table(reports, row_label="BinSizeSec", rows=[str(size) for size in bin_sizes]))
    evaluation.write_report_json(
        reports,
        Path(args.out) / "sweep.json",
        extra={"bin_sizes_sec": list(bin_sizes), "parameters": config.model_dump(mode="json")},
    )
    return 0


def _positive_int(value: str) -> int:
    number = int(value)
    if number <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return number


def _add_run_flags(parser: argparse.ArgumentParser, with_method: bool = True) -> None:
    parser.add_argument("--bin-size-sec", type=_positive_int, default=settings.BIN_SIZE_SEC, help="Bin size tau in seconds")
    parser.add_argument("--rtt-us", type=int, default=settings.RTT_US, help="Estimated round trip time in microseconds")
    parser.add_argument("--max-drift-bins", type=int, default=settings.MAX_DRIFT_BINS, help="Time drift in bins")
    parser.add_argument("--smooth-window", type=int, default=settings.SMOOTH_WINDOW, help="Moving average width in bins")
    parser.add_argument("--period-start", type=parse_timestamp_us, default=None, help="Microseconds or ISO-8601")
    parser.add_argument("--period-end", type=parse_timestamp_us, default=None, help="Microseconds or ISO-8601")
    parser.add_argument("--jobs", type=_positive_int, default=settings.JOBS or None, help="Worker processes")
    parser.add_argument("--span-format", choices=[fmt.value for fmt in SpanFormat], default=None)
    if with_method:
        parser.add_argument("--method", choices=[method.value for method in pipeline.Method], default=pipeline.Method.AID.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aid", description=settings.APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="Overrides AID_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["console", "json"], default=None, help="Overrides AID_LOG_FORMAT")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="Generate a labeled span corpus")
    simulate.add_argument("spec", help="Simulation spec JSON")
    simulate.add_argument("--out", required=True, help="Output directory")
    simulate.add_argument("--seed", type=int, default=None, help="Overrides the spec's seed")
    simulate.set_defaults(handler=cmd_simulate)

    predict = subparsers.add_parser("predict", help="Predict dependency intensities from spans")
    predict.add_argument("spans", help="Span file (.jsonl or .csv)")
    predict.add_argument("--out", required=True, help="Output directory")
    _add_run_flags(predict)
    predict.add_argument("--indirect-threshold", type=float, default=None, help="Infer indirect edges at or above")
    predict.add_argument("--format", action="append", choices=list(pipeline.OUTPUT_FORMATS), default=None)
    predict.set_defaults(handler=cmd_predict)

    evaluate = subparsers.add_parser("evaluate", help="Score an intensity table against labels")
    evaluate.add_argument("intensities", help="intensities.csv")
    evaluate.add_argument("labels", help="labels.csv")
    evaluate.add_argument("--method", choices=[method.value for method in pipeline.Method], default=None)
    evaluate.add_argument("--ce-epsilon", type=float, default=settings.CE_EPSILON)
    evaluate.add_argument("--out", default=None, help="Report path, defaults next to the intensities")
    evaluate.set_defaults(handler=cmd_evaluate)

    compare = subparsers.add_parser("compare", help="Compare every method on one corpus")
    compare.add_argument("spans")
    compare.add_argument("labels")
    compare.add_argument("--out", required=True, help="Output directory")
    _add_run_flags(compare, with_method=False)
    compare.add_argument("--methods", action="append", choices=[method.value for method in pipeline.Method], default=None)
    compare.set_defaults(handler=cmd_compare)

    sweep = subparsers.add_parser("sweep", help="Evaluate one method across bin sizes")
    sweep.add_argument("spans")
    sweep.add_argument("labels")
    sweep.add_argument("--out", required=True, help="Output directory")
    _add_run_flags(sweep)
    sweep.add_argument("--bin-sizes-sec", type=_positive_int, nargs="+", default=None)
    sweep.set_defaults(handler=cmd_sweep)

    return parser


def dispatch(args: argparse.Namespace) -> int:
    if getattr(args, "indirect_threshold", None) is not None and not 0.0 <= args.indirect_threshold <= 1.0:
        raise InvalidArgumentError(f"--indirect-threshold must be within [0, 1], got {args.indirect_threshold}")
    if getattr(args, "out", None) and Path(args.out).exists() and not Path(args.out).is_dir() and args.command != "evaluate":
        raise InputOutputError(f"output path {args.out} is not a directory")
    return args.handler(args)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
