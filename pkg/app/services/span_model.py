import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.errors import DuplicateSpanError, InputOutputError, InvalidInputError

logger = structlog.get_logger(__name__)

# Interchange field order, shared by the JSONL keys and the CSV columns
SPAN_FIELDS = (
    "span_id",
    "parent_span_id",
    "trace_id",
    "service_name",
    "timestamp_us",
    "duration_us",
    "result",
)


class SpanResult(str, Enum):
    SUCCESS = "SUCCESS"
    ERROR = "ERROR"


class SpanFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"


class Span(BaseModel):
    """One service invocation record."""

    model_config = ConfigDict(frozen=True)

    span_id: str = Field(min_length=1)
    parent_span_id: Optional[str] = None
    trace_id: str
    service_name: str = Field(min_length=1)
    timestamp_us: int = Field(ge=0)
    duration_us: int = Field(ge=0)
    result: SpanResult
    parent_service_name: Optional[str] = None

    @field_validator("parent_span_id", mode="before")
    @classmethod
    def _empty_parent_is_root(cls, value):
        if value is None or value == "":
            return None
        return value

    @field_validator("result", mode="before")
    @classmethod
    def _parse_result(cls, value):
        # Only the exact literal SUCCESS is a success, tracers emit many error codes
        if isinstance(value, SpanResult):
            return value
        if value is None or value == "":
            raise ValueError("result must be non-empty")
        return SpanResult.SUCCESS if value == "SUCCESS" else SpanResult.ERROR

    @property
    def is_root(self) -> bool:
        return self.parent_span_id is None

    @property
    def is_error(self) -> bool:
        return self.result is SpanResult.ERROR

    def to_record(self) -> Dict[str, Union[str, int, None]]:
        return {
            "span_id": self.span_id,
            "parent_span_id": self.parent_span_id,
            "trace_id": self.trace_id,
            "service_name": self.service_name,
            "timestamp_us": self.timestamp_us,
            "duration_us": self.duration_us,
            "result": self.result.value,
        }


@dataclass(frozen=True)
class RecordError:
    line_number: int
    message: str


@dataclass(frozen=True)
class SpanCorpus:
    """
    All spans of one observation period T

    Immutable, so one corpus can be shared read-only by parallel workers.
    """

    spans: Tuple[Span, ...] = ()
    time_start_us: Optional[int] = None
    time_end_us: Optional[int] = None
    orphan_count: int = 0
    augmented: bool = False
    record_errors: Tuple[RecordError, ...] = field(default=(), compare=False)

    @classmethod
    def from_spans(cls, spans: Iterable[Span], record_errors: Iterable[RecordError] = ()) -> "SpanCorpus":
        """
        Build a corpus, rejecting duplicate span ids and computing the time bounds

        Raises:
            DuplicateSpanError: two spans share a span_id
        """
        spans = tuple(spans)
        seen = set()
        for span in spans:
            if span.span_id in seen:
                raise DuplicateSpanError(span.span_id)
            seen.add(span.span_id)

        if spans:
            timestamps = [span.timestamp_us for span in spans]
            start, end = min(timestamps), max(timestamps)
        else:
            start = end = None

        return cls(spans=spans, time_start_us=start, time_end_us=end, record_errors=tuple(record_errors))

    @property
    def bounds_defined(self) -> bool:
        return self.time_start_us is not None

    @property
    def root_count(self) -> int:
        return sum(1 for span in self.spans if span.is_root)

    @property
    def services(self) -> List[str]:
        return sorted({span.service_name for span in self.spans})

    def __len__(self) -> int:
        return len(self.spans)

    def to_frame(self) -> pd.DataFrame:
        """One row per span, in corpus order."""
        return pd.DataFrame(
            {
                "span_id": [span.span_id for span in self.spans],
                "service_name": pd.Series([span.service_name for span in self.spans], dtype=object),
                "timestamp_us": pd.Series([span.timestamp_us for span in self.spans], dtype="int64"),
                "duration_us": pd.Series([span.duration_us for span in self.spans], dtype="int64"),
                "is_error": pd.Series([span.is_error for span in self.spans], dtype=bool),
            }
        )


def _infer_format(path: Path) -> SpanFormat:
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json", ".ndjson"):
        return SpanFormat.JSONL
    if suffix == ".csv":
        return SpanFormat.CSV
    raise InvalidInputError(f"cannot infer span format from {path.name!r}, pass jsonl or csv explicitly")


def _parse_jsonl(handle) -> Tuple[List[Span], List[RecordError]]:
    spans, errors = [], []
    for line_number, line in enumerate(handle, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("record is not a JSON object")
            keys = set(record)
            missing = [key for key in SPAN_FIELDS if key not in keys]
            unexpected = sorted(keys - set(SPAN_FIELDS))
            if missing:
                raise ValueError(f"missing fields {missing}")
            if unexpected:
                raise ValueError(f"unexpected fields {unexpected}")
            spans.append(Span.model_validate(record))
        except (ValueError, ValidationError) as e:
            errors.append(RecordError(line_number, str(e)))
    return spans, errors


def _parse_csv(handle) -> Tuple[List[Span], List[RecordError]]:
    reader = csv.reader(handle)
    header = next(reader, None)
    if header is None:
        return [], []
    if tuple(column.strip() for column in header) != SPAN_FIELDS:
        raise InvalidInputError(f"CSV header must be {','.join(SPAN_FIELDS)}, got {','.join(header)}")

    spans, errors = [], []
    for row in reader:
        line_number = reader.line_num
        if not row:
            continue
        try:
            if len(row) != len(SPAN_FIELDS):
                raise ValueError(f"expected {len(SPAN_FIELDS)} columns, got {len(row)}")
            spans.append(Span.model_validate(dict(zip(SPAN_FIELDS, row))))
        except (ValueError, ValidationError) as e:
            errors.append(RecordError(line_number, str(e)))
    return spans, errors


def load_spans(path: Union[str, Path], fmt: Optional[Union[SpanFormat, str]] = None) -> SpanCorpus:
    """
    Load a span file into a corpus

    Malformed records are collected with their line number and skipped; the load
    goes on and the count is logged.

    Args:
        path: Span file path
        fmt: "jsonl" or "csv", inferred from the suffix when omitted

    Returns:
        Corpus with every parseable span, not yet parent-augmented

    Raises:
        InputOutputError: the file cannot be read
        DuplicateSpanError: two records share a span_id
    """
    path = Path(path)
    if not path.is_file():
        raise InputOutputError(f"span file {path} not found")
    fmt = SpanFormat(fmt) if fmt is not None else _infer_format(path)

    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            if fmt is SpanFormat.JSONL:
                spans, errors = _parse_jsonl(handle)
            else:
                spans, errors = _parse_csv(handle)
    except OSError as e:
        raise InputOutputError(f"cannot read span file {path}: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise InputOutputError(f"span file {path} is not UTF-8: {e}") from e

    for error in errors:
        logger.warning("span_record_rejected", path=str(path), line=error.line_number, reason=error.message)

    corpus = SpanCorpus.from_spans(spans, record_errors=errors)
    if not corpus.bounds_defined:
        logger.warning("span_corpus_empty", path=str(path))

    logger.info(
        "spans_loaded",
        path=str(path),
        format=fmt.value,
        spans=len(corpus),
        record_errors=len(errors),
    )
    return corpus


def write_spans(corpus: SpanCorpus, path: Union[str, Path], fmt: Optional[Union[SpanFormat, str]] = None) -> None:
    """
    Write the seven interchange fields of every span

    Args:
        corpus: Corpus to write
        path: Destination file
        fmt: "jsonl" or "csv", inferred from the suffix when omitted
    """
    path = Path(path)
    fmt = SpanFormat(fmt) if fmt is not None else _infer_format(path)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            if fmt is SpanFormat.JSONL:
                for span in corpus.spans:
                    handle.write(json.dumps(span.to_record(), ensure_ascii=False))
                    handle.write("\n")
            else:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(SPAN_FIELDS)
                for span in corpus.spans:
                    record = span.to_record()
                    if record["parent_span_id"] is None:
                        record["parent_span_id"] = ""
                    writer.writerow([record[key] for key in SPAN_FIELDS])
    except OSError as e:
        raise InputOutputError(f"cannot write span file {path}: {e.strerror or e}") from e


def augment_parent_names(corpus: SpanCorpus) -> SpanCorpus:
    """
    Fill parent_service_name from the span whose id equals parent_span_id

    Roots keep it absent. Unresolvable parents also keep it absent and are counted
    as orphans; orphans still contribute to their own service's KPIs. The orphan
    count is recomputed from scratch, so applying this twice equals applying it once.

    Args:
        corpus: Loaded corpus

    Returns:
        New augmented corpus
    """
    service_by_span = {span.span_id: span.service_name for span in corpus.spans}

    augmented = []
    orphans = 0
    for span in corpus.spans:
        if span.parent_span_id is None:
            parent_name = None
        else:
            parent_name = service_by_span.get(span.parent_span_id)
            if parent_name is None:
                orphans += 1

        if parent_name != span.parent_service_name:
            span = span.model_copy(update={"parent_service_name": parent_name})
        augmented.append(span)

    if orphans:
        logger.warning("orphan_spans", orphans=orphans, spans=len(corpus))

    return replace(corpus, spans=tuple(augmented), orphan_count=orphans, augmented=True)
