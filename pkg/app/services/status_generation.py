"""Per-service status series: invocation count, error rate and mean duration per bin."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt

from app.config.config import settings
from app.errors import InputOutputError, InvalidArgumentError, InvalidInputError, ResourceGuardError
from app.services.span_model import SpanCorpus

logger = structlog.get_logger(__name__)

KPIS = ("invo", "err", "dur")


class BinningConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    bin_size_us: PositiveInt = Field(default=settings.BIN_SIZE_SEC * 1_000_000)
    period_start_us: Optional[int] = None
    period_end_us: Optional[int] = None
    smooth_window: NonNegativeInt = 0


@dataclass(frozen=True)
class Period:
    start_us: int
    end_us: int
    bin_size_us: int

    @property
    def n_bins(self) -> int:
        return -(-(self.end_us - self.start_us) // self.bin_size_us)


def resolve_period(corpus: SpanCorpus, config: BinningConfig, max_bins: int = None) -> Period:
    """
    Resolve the bin edges of the observation period

    The start is floored to a multiple of the bin size from the epoch. The default
    end is one microsecond past the last span, so the last span falls in period.

    Raises:
        InvalidInputError: no time bounds, or an empty period
        ResourceGuardError: more bins than max_bins
    """
    max_bins = settings.MAX_BINS if max_bins is None else max_bins
    tau = config.bin_size_us

    start = config.period_start_us if config.period_start_us is not None else corpus.time_start_us
    end = config.period_end_us if config.period_end_us is not None else (
        corpus.time_end_us + 1 if corpus.time_end_us is not None else None
    )
    if start is None or end is None:
        raise InvalidInputError("observation period is undefined: the corpus is empty and no period was given")

    start = (start // tau) * tau
    if end <= start:
        raise InvalidInputError(f"period end {end} must be after period start {start}")

    period = Period(start_us=start, end_us=end, bin_size_us=tau)
    if period.n_bins > max_bins:
        raise ResourceGuardError(f"{period.n_bins} bins exceed the limit of {max_bins}")
    return period


@dataclass(frozen=True)
class StatusSeries:
    service_name: str
    invo: np.ndarray
    err: np.ndarray
    dur: np.ndarray
    max_span_duration_us: int = 0

    def __post_init__(self):
        if not (len(self.invo) == len(self.err) == len(self.dur)):
            raise InvalidInputError(f"status series of {self.service_name} have unequal lengths")
        for kpi in KPIS:
            getattr(self, kpi).setflags(write=False)

    @property
    def n_bins(self) -> int:
        return len(self.invo)

    def kpi(self, name: str) -> np.ndarray:
        if name not in KPIS:
            raise InvalidArgumentError(f"unknown KPI {name!r}")
        return getattr(self, name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t_index": np.arange(self.n_bins), "invo": self.invo, "err": self.err, "dur": self.dur}
        )


def smooth_series(series: Sequence[float], window: int) -> np.ndarray:
    """
    Trailing moving average, same length as the input

    output[t] is the mean of series[max(0, t - window + 1) .. t].

    Raises:
        InvalidArgumentError: window < 1 or window longer than the series
    """
    values = np.asarray(series, dtype=float)
    if window < 1:
        raise InvalidArgumentError(f"smoothing window must be >= 1, got {window}")
    if window > len(values):
        raise InvalidArgumentError(f"smoothing window {window} exceeds series length {len(values)}")
    if window == 1:
        return values.copy()
    return pd.Series(values).rolling(window=window, min_periods=1).mean().to_numpy()


def generate_status(
    corpus: SpanCorpus, config: BinningConfig, max_bins: int = None, period: Period = None
) -> Dict[str, StatusSeries]:
    """
    Distribute spans into bins and compute each service's KPIs

    A span's bin is floor((timestamp - period start) / bin size). Empty bins have
    all KPIs at zero. Spans outside [start, end) are dropped and counted. The
    longest span duration of a service is taken over the whole corpus, dropped
    spans included.

    Args:
        corpus: Span corpus
        config: Binning configuration
        max_bins: Resource guard, defaults to settings.MAX_BINS
        period: Already resolved period, resolved from corpus and config when omitted

    Returns:
        Dictionary of service name to status series, sorted by service name
    """
    if period is None:
        period = resolve_period(corpus, config, max_bins)
    elif period.bin_size_us != config.bin_size_us:
        raise InvalidArgumentError(
            f"period bin size {period.bin_size_us} differs from the configured {config.bin_size_us}"
        )
    n_bins = period.n_bins

    frame = corpus.to_frame()
    max_duration = frame.groupby("service_name")["duration_us"].max()
    in_period = (frame["timestamp_us"] >= period.start_us) & (frame["timestamp_us"] < period.end_us)
    dropped = int((~in_period).sum())
    if dropped:
        logger.warning("spans_out_of_period", dropped=dropped, start_us=period.start_us, end_us=period.end_us)

    spans = frame[in_period].copy()
    spans["bin"] = (spans["timestamp_us"] - period.start_us) // period.bin_size_us

    per_bin = spans.groupby(["service_name", "bin"], sort=True).agg(
        invo=("span_id", "size"),
        errors=("is_error", "sum"),
        dur=("duration_us", "mean"),
    )
    binned_services = set(spans["service_name"])

    status = {}
    for service in corpus.services:
        invo = np.zeros(n_bins)
        err = np.zeros(n_bins)
        dur = np.zeros(n_bins)

        if service in binned_services:
            bins = per_bin.loc[service]
            index = bins.index.to_numpy(dtype=np.int64)
            invo[index] = bins["invo"].to_numpy(dtype=float)
            err[index] = bins["errors"].to_numpy(dtype=float) / invo[index]
            dur[index] = bins["dur"].to_numpy(dtype=float)
        longest = int(max_duration.loc[service]) if service in max_duration.index else 0

        if config.smooth_window > 0:
            invo = smooth_series(invo, config.smooth_window)
            err = smooth_series(err, config.smooth_window)
            dur = smooth_series(dur, config.smooth_window)

        status[service] = StatusSeries(
            service_name=service, invo=invo, err=err, dur=dur, max_span_duration_us=longest
        )

    logger.info(
        "status_generated",
        services=len(status),
        bins=n_bins,
        bin_size_us=period.bin_size_us,
        smooth_window=config.smooth_window,
    )
    return status


def write_status_csv(series: StatusSeries, path: Union[str, Path]) -> None:
    """Write one series as CSV with columns t_index, invo, err, dur."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        series.to_frame().to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
    except OSError as e:
        raise InputOutputError(f"cannot write status series to {path}: {e.strerror or e}") from e


def write_status_dir(status: Dict[str, StatusSeries], directory: Union[str, Path]) -> None:
    """Write every service's series to <directory>/<service>.csv."""
    directory = Path(directory)
    for service, series in status.items():
        safe_name = service.replace("/", "_").replace("\\", "_")
        write_status_csv(series, directory / f"{safe_name}.csv")
