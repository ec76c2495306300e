import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from app.config.config import settings
from app.errors import InputOutputError, InvalidArgumentError, InvalidInputError
from app.services.candidate_selection import (
    CandidatePair,
    CandidateSet,
    candidate_summary,
    select_candidates,
    write_candidates,
)
from app.services.evaluation import EvalReport, LabelSet, evaluate, load_labels
from app.services.intensity import (
    DependencyGraph,
    IntensityRecord,
    baseline_record,
    build_graph,
    infer_indirect,
    score_pairs,
    write_graph_dot,
    write_graph_json,
    write_intensities_csv,
)
from app.services.similarity import DswConfig, Measure, PairCosts, baseline_similarities, pair_costs
from app.services.span_model import SpanCorpus, SpanFormat, augment_parent_names, load_spans
from app.services.status_generation import (
    KPIS,
    BinningConfig,
    Period,
    StatusSeries,
    generate_status,
    resolve_period,
    write_status_dir,
)

logger = structlog.get_logger(__name__)

OUTPUT_FORMATS = ("dot", "json", "csv", "candidates", "status")
DEFAULT_FORMATS = ("dot", "json", "csv")

# One to ten minutes
DEFAULT_SWEEP_SEC = tuple(60 * minutes for minutes in range(1, 11))


class Method(str, Enum):
    AID = "aid"
    AID_DTW = "aid-dtw"
    PEARSON = "pearson"
    SPEARMAN = "spearman"
    KENDALL = "kendall"

    @property
    def report_tag(self) -> str:
        return {"aid": "aid_dsw", "aid-dtw": "aid_dtw"}.get(self.value, self.value)

    @property
    def is_warping(self) -> bool:
        return self in (Method.AID, Method.AID_DTW)


class RunStatus:
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


def _default_binning() -> BinningConfig:
    return BinningConfig(smooth_window=settings.SMOOTH_WINDOW)


class RunConfig(BaseModel):
    """Every parameter of one prediction run."""

    model_config = ConfigDict(frozen=True)

    binning: BinningConfig = Field(default_factory=_default_binning)
    dsw: DswConfig = Field(default_factory=DswConfig)
    method: Method = Method.AID
    indirect_threshold: Optional[float] = Field(default=None, ge=0, le=1)
    jobs: Optional[PositiveInt] = None
    ce_epsilon: PositiveFloat = Field(default=settings.CE_EPSILON, lt=0.5)
    span_format: Optional[SpanFormat] = None

    @model_validator(mode="after")
    def _bin_sizes_agree(self):
        if self.binning.bin_size_us != self.dsw.bin_size_us:
            raise ValueError(
                f"binning and DSW bin sizes differ ({self.binning.bin_size_us} vs {self.dsw.bin_size_us})"
            )
        return self

    def with_bin_size(self, bin_size_us: int) -> "RunConfig":
        return RunConfig(
            binning=self.binning.model_copy(update={"bin_size_us": bin_size_us}),
            dsw=self.dsw.model_copy(update={"bin_size_us": bin_size_us}),
            method=self.method,
            indirect_threshold=self.indirect_threshold,
            jobs=self.jobs,
            ce_epsilon=self.ce_epsilon,
            span_format=self.span_format,
        )

    def with_method(self, method: Union[Method, str]) -> "RunConfig":
        return self.model_copy(update={"method": Method(method)})


@dataclass
class PreparedCorpus:
    """Everything the scoring step needs, shared by all methods of a comparison."""

    source_name: str
    sha256: str
    corpus: SpanCorpus
    candidates: CandidateSet
    period: Period
    status: Dict[str, StatusSeries]


@dataclass
class PredictionRun:
    config: RunConfig
    prepared: PreparedCorpus
    costs: List[PairCosts]
    records: List[IntensityRecord]
    graph: DependencyGraph
    status: str = RunStatus.PROCESSING
    stages_completed: List[str] = field(default_factory=list)

    @property
    def predictions(self) -> Dict[CandidatePair, float]:
        return {record.pair: record.intensity for record in self.records}


def update_run_status(run_id: str, status: str, stage: str = None) -> None:
    """Log the progress of a run."""
    logger.info("run_status", run=run_id, status=status, stage=stage)


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as e:
        raise InputOutputError(f"cannot read {path}: {e.strerror or e}") from e
    return digest.hexdigest()


def resolve_jobs(jobs: Optional[int]) -> int:
    if jobs is None or jobs < 1:
        return settings.JOBS if settings.JOBS > 0 else (os.cpu_count() or 1)
    return jobs


def prepare_corpus(spans_path: Union[str, Path], config: RunConfig) -> PreparedCorpus:
    """
    Load spans and run candidate selection and status generation

    Args:
        spans_path: Span file
        config: Run configuration

    Returns:
        Prepared corpus with candidate pairs and status series
    """
    spans_path = Path(spans_path)
    run_id = spans_path.name

    update_run_status(run_id, RunStatus.PROCESSING, "load_spans")
    corpus = load_spans(spans_path, config.span_format)
    sha256 = file_digest(spans_path)

    # Step 1: Candidate selection
    update_run_status(run_id, RunStatus.PROCESSING, "candidate_selection")
    corpus = augment_parent_names(corpus)
    candidates = select_candidates(corpus)

    # Step 2: Status generation
    update_run_status(run_id, RunStatus.PROCESSING, "status_generation")
    period = resolve_period(corpus, config.binning)
    status = generate_status(corpus, config.binning, period=period)

    return PreparedCorpus(
        source_name=spans_path.name,
        sha256=sha256,
        corpus=corpus,
        candidates=candidates,
        period=period,
        status=status,
    )


def _warping_task(task) -> PairCosts:
    caller, callee, pair, dsw_config, measure = task
    return pair_costs(caller, callee, dsw_config, pair=pair, measure=measure)


def _baseline_task(task) -> Dict[str, float]:
    caller, callee, method = task
    return baseline_similarities(caller, callee, method)


def _run_tasks(fn: Callable, tasks: Sequence, jobs: int) -> List:
    """Order-preserving map, in-process for one job or a process pool otherwise."""
    if jobs == 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (jobs * 4))))


def score_candidates(prepared: PreparedCorpus, config: RunConfig):
    """
    Intensity of every candidate pair with the configured method

    The per-pair similarity stage runs in parallel; the normalization that
    follows needs all pairs and runs after it.

    Returns:
        Tuple of (pair costs, intensity records); costs are empty for baselines
    """
    if not len(prepared.candidates):
        raise InvalidInputError("no candidate pair: no span has a resolvable parent")

    pairs = list(prepared.candidates)
    jobs = resolve_jobs(config.jobs)
    status = prepared.status

    if config.method.is_warping:
        measure = Measure.DTW if config.method is Method.AID_DTW else Measure.DSW
        tasks = [(status[pair.caller], status[pair.callee], pair, config.dsw, measure) for pair in pairs]
        costs = _run_tasks(_warping_task, tasks, jobs)
        records = score_pairs(costs)
    else:
        tasks = [(status[pair.caller], status[pair.callee], config.method.value) for pair in pairs]
        scores = _run_tasks(_baseline_task, tasks, jobs)
        costs = []
        records = [baseline_record(pair, score) for pair, score in zip(pairs, scores)]

    logger.info("pairs_scored", method=config.method.value, pairs=len(records), jobs=jobs)
    return costs, records


def predict(spans_path: Union[str, Path], config: RunConfig, prepared: PreparedCorpus = None) -> PredictionRun:
    """
    Run the whole pipeline on a span file

    Args:
        spans_path: Span file
        config: Run configuration
        prepared: Reuse an already prepared corpus (same file and binning)

    Returns:
        Prediction run with costs, intensity records and the dependency graph
    """
    prepared = prepared or prepare_corpus(spans_path, config)
    run_id = prepared.source_name

    try:
        # Step 3: Intensity prediction
        update_run_status(run_id, RunStatus.PROCESSING, "intensity_prediction")
        costs, records = score_candidates(prepared, config)

        update_run_status(run_id, RunStatus.PROCESSING, "dependency_graph")
        graph = build_graph(records)
        if config.indirect_threshold is not None:
            graph = infer_indirect(graph, config.indirect_threshold)
    except Exception:
        update_run_status(run_id, RunStatus.FAILED)
        raise

    run = PredictionRun(
        config=config,
        prepared=prepared,
        costs=costs,
        records=records,
        graph=graph,
        status=RunStatus.COMPLETED,
        stages_completed=[
            "load_spans", "candidate_selection", "status_generation", "intensity_prediction", "dependency_graph"
        ],
    )
    update_run_status(run_id, RunStatus.COMPLETED)
    return run


def build_manifest(run: PredictionRun, outputs: Iterable[str]) -> Dict[str, Any]:
    """
    Everything needed to reproduce a run

    No wall-clock time is recorded, so identical runs give identical manifests.
    """
    prepared = run.prepared
    corpus = prepared.corpus
    return {
        "tool": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "status": run.status,
        "stages_completed": run.stages_completed,
        "input": {
            "name": prepared.source_name,
            "sha256": prepared.sha256,
            "format": run.config.span_format.value if run.config.span_format else None,
        },
        "parameters": run.config.model_dump(mode="json"),
        "period": {
            "start_us": prepared.period.start_us,
            "end_us": prepared.period.end_us,
            "bin_size_us": prepared.period.bin_size_us,
            "n_bins": prepared.period.n_bins,
        },
        "smoothing": {
            "window": run.config.binning.smooth_window,
            "applied_to": list(KPIS),
        },
        "corpus": {
            "spans": len(corpus),
            "services": len(corpus.services),
            "roots": corpus.root_count,
            "orphans": corpus.orphan_count,
            "out_of_period": sum(
                1 for span in corpus.spans if not prepared.period.start_us <= span.timestamp_us < prepared.period.end_us
            ),
            "record_errors": len(corpus.record_errors),
        },
        "candidates": candidate_summary(prepared.candidates),
        "inferred_edges": len(run.graph.edges) - len(run.graph.direct_edges()),
        "outputs": sorted(outputs),
    }


def write_prediction_outputs(
    run: PredictionRun, out_dir: Union[str, Path], formats: Sequence[str] = DEFAULT_FORMATS
) -> List[Path]:
    """
    Write the selected outputs and manifest.json

    graph.json, graph.dot and intensities.csv by default. "candidates" adds
    candidates.tsv and "status" adds one status/<service>.csv per service.

    Returns:
        Paths written
    """
    unknown = sorted(set(formats) - set(OUTPUT_FORMATS))
    if unknown:
        raise InvalidArgumentError(f"unknown output formats {unknown}, expected some of {', '.join(OUTPUT_FORMATS)}")

    out_dir = Path(out_dir)
    written = []

    if "json" in formats:
        write_graph_json(run.graph, out_dir / "graph.json")
        written.append(out_dir / "graph.json")
    if "dot" in formats:
        write_graph_dot(run.graph, out_dir / "graph.dot")
        written.append(out_dir / "graph.dot")
    if "csv" in formats:
        write_intensities_csv(run.records, out_dir / "intensities.csv")
        written.append(out_dir / "intensities.csv")
    if "candidates" in formats:
        write_candidates(run.prepared.candidates, out_dir / "candidates.tsv")
        written.append(out_dir / "candidates.tsv")
    if "status" in formats:
        write_status_dir(run.prepared.status, out_dir / "status")
        written.append(out_dir / "status")

    manifest = build_manifest(run, [path.name for path in written] + ["manifest.json"])
    manifest_path = out_dir / "manifest.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise InputOutputError(f"cannot write manifest to {manifest_path}: {e.strerror or e}") from e
    written.append(manifest_path)

    logger.info("outputs_written", out_dir=str(out_dir), files=[path.name for path in written])
    return written


def compare_methods(
    spans_path: Union[str, Path],
    labels: Union[LabelSet, str, Path],
    config: RunConfig,
    methods: Sequence[Method] = tuple(Method),
) -> List[EvalReport]:
    """
    Evaluate several methods on the same corpus and labels

    Returns:
        One report per method, in the given order
    """
    labels = labels if isinstance(labels, LabelSet) else load_labels(labels)
    prepared = prepare_corpus(spans_path, config)

    reports = []
    for method in methods:
        method_config = config.with_method(method)
        run = predict(spans_path, method_config, prepared=prepared)
        reports.append(evaluate(run.predictions, labels, method_config.method.report_tag, config.ce_epsilon))
    return reports


def sweep_bin_sizes(
    spans_path: Union[str, Path],
    labels: Union[LabelSet, str, Path],
    config: RunConfig,
    bin_sizes_sec: Sequence[int] = DEFAULT_SWEEP_SEC,
) -> List[EvalReport]:
    """
    Evaluate the configured method under several bin sizes

    Bin sizes are given in seconds; the drift stays the same number of bins.

    Returns:
        One report per bin size, in the given order
    """
    labels = labels if isinstance(labels, LabelSet) else load_labels(labels)

    reports = []
    for bin_size_sec in bin_sizes_sec:
        if bin_size_sec <= 0:
            raise InvalidInputError(f"bin size must be positive, got {bin_size_sec}")
        sized = config.with_bin_size(int(bin_size_sec) * 1_000_000)
        run = predict(spans_path, sized)
        reports.append(evaluate(run.predictions, labels, sized.method.report_tag, config.ce_epsilon))
        logger.info("bin_size_evaluated", bin_size_sec=bin_size_sec, ce=reports[-1].ce)
    return reports
