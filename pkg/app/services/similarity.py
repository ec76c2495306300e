"""
Distance between a caller's and a callee's status series

Dynamic status warping (DSW) is a directed, window-constrained variant of dynamic
time warping: callee bin i may only be matched with caller bins in
[i - max_drift, i + window + max_drift], because a callee's status reaches its
caller after the invocation's duration plus the round trip time, and clocks may
drift either way.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt
from scipy import stats

from app.config.config import settings
from app.errors import InvalidArgumentError, InvalidInputError
from app.services.candidate_selection import CandidatePair
from app.services.status_generation import KPIS, StatusSeries


class DswConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rtt_us: NonNegativeInt = Field(default=settings.RTT_US)
    max_drift_bins: NonNegativeInt = Field(default=settings.MAX_DRIFT_BINS)
    bin_size_us: PositiveInt = Field(default=settings.BIN_SIZE_SEC * 1_000_000)


class Measure(str, Enum):
    DSW = "dsw"
    DTW = "dtw"


class CorrelationMethod(str, Enum):
    PEARSON = "pearson"
    SPEARMAN = "spearman"
    KENDALL = "kendall"


@dataclass(frozen=True)
class PairCosts:
    pair: CandidatePair
    cost_invo: float
    cost_err: float
    cost_dur: float
    window_bins: int

    def cost(self, kpi: str) -> float:
        if kpi not in KPIS:
            raise InvalidArgumentError(f"unknown KPI {kpi!r}")
        return getattr(self, f"cost_{kpi}")


def compute_window(callee: StatusSeries, config: DswConfig) -> int:
    """
    Warping window in bins: ceil((longest callee span + rtt) / bin size)

    Any positive propagation time rounds up to at least one bin.
    """
    total_us = callee.max_span_duration_us + config.rtt_us
    return -(-total_us // config.bin_size_us)


def _check_series(caller_series: Sequence[float], callee_series: Sequence[float]):
    caller = np.asarray(caller_series, dtype=float)
    callee = np.asarray(callee_series, dtype=float)
    if caller.size == 0 or callee.size == 0:
        raise InvalidArgumentError("status series must not be empty")
    if caller.size != callee.size:
        raise InvalidArgumentError(
            f"status series lengths differ ({caller.size} vs {callee.size}); both must share the same bins"
        )
    return caller, callee


def dsw(caller_series: Sequence[float], callee_series: Sequence[float], window_bins: int, max_drift_bins: int) -> float:
    """
    Dynamic status warping cost between two status series

    Rows of the cost matrix are callee bins, columns are caller bins, and the local
    cost is the squared difference. Cells outside the warping region stay +inf.
    The first column is filled up to row max_drift and the first row up to column
    window + max_drift, both 1-indexed.

    Args:
        caller_series: Caller status series
        callee_series: Callee status series, same length
        window_bins: Warping window w in bins
        max_drift_bins: Time drift in bins

    Returns:
        Warping cost, +inf when the last cell is unreachable

    Raises:
        InvalidArgumentError: empty or unequal series, negative window or drift
    """
    caller, callee = _check_series(caller_series, callee_series)
    if window_bins < 0 or max_drift_bins < 0:
        raise InvalidArgumentError("window and drift must be non-negative")

    w, drift = int(window_bins), int(max_drift_bins)
    n_callee, n_caller = callee.size, caller.size

    cost = np.full((n_callee, n_caller), np.inf)
    cost[0, 0] = (caller[0] - callee[0]) ** 2

    # First column
    for i in range(1, min(drift, n_callee)):
        cost[i, 0] = cost[i - 1, 0] + (caller[0] - callee[i]) ** 2

    # First row
    for j in range(1, min(w + drift, n_caller)):
        cost[0, j] = cost[0, j - 1] + (caller[j] - callee[0]) ** 2

    for i in range(1, n_callee):
        for j in range(max(1, i - drift), min(n_caller, i + w + drift + 1)):
            cost[i, j] = min(cost[i - 1, j - 1], cost[i - 1, j], cost[i, j - 1]) + (caller[j] - callee[i]) ** 2

    return float(cost[-1, -1])


def dtw(caller_series: Sequence[float], callee_series: Sequence[float]) -> float:
    """Unconstrained dynamic time warping with squared-difference local cost."""
    caller, callee = _check_series(caller_series, callee_series)

    local = (callee[:, None] - caller[None, :]) ** 2
    acc = np.full((callee.size + 1, caller.size + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, callee.size + 1):
        for j in range(1, caller.size + 1):
            acc[i, j] = local[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    return float(acc[-1, -1])


def pair_costs(
    caller: StatusSeries,
    callee: StatusSeries,
    config: DswConfig,
    pair: CandidatePair = None,
    measure: Measure = Measure.DSW,
) -> PairCosts:
    """
    Warping cost of each KPI for one candidate pair

    All three KPIs share the window computed from the callee.

    Args:
        caller: Caller status series
        callee: Callee status series
        config: DSW configuration
        pair: Candidate pair, defaults to (caller, callee) service names
        measure: DSW, or unconstrained DTW for the ablation

    Returns:
        Per-KPI costs
    """
    if caller.n_bins != callee.n_bins:
        raise InvalidInputError(
            f"{caller.service_name} and {callee.service_name} have different bin counts "
            f"({caller.n_bins} vs {callee.n_bins})"
        )
    pair = pair or CandidatePair(caller.service_name, callee.service_name)
    window = compute_window(callee, config)

    costs = {}
    for kpi in KPIS:
        if measure is Measure.DTW:
            costs[kpi] = dtw(caller.kpi(kpi), callee.kpi(kpi))
        else:
            costs[kpi] = dsw(caller.kpi(kpi), callee.kpi(kpi), window, config.max_drift_bins)

    return PairCosts(
        pair=pair,
        cost_invo=costs["invo"],
        cost_err=costs["err"],
        cost_dur=costs["dur"],
        window_bins=window,
    )


_CORRELATIONS = {
    CorrelationMethod.PEARSON: stats.pearsonr,
    CorrelationMethod.SPEARMAN: stats.spearmanr,
    CorrelationMethod.KENDALL: stats.kendalltau,
}


def correlation_baseline(caller_series: Sequence[float], callee_series: Sequence[float], method) -> float:
    """
    Correlation coefficient mapped to [0, 1] by (r + 1) / 2

    A coefficient undefined because one series is constant gives 0.5.

    Raises:
        InvalidArgumentError: series shorter than 2 or of different lengths
    """
    method = CorrelationMethod(method)
    caller = np.asarray(caller_series, dtype=float)
    callee = np.asarray(callee_series, dtype=float)
    if caller.size != callee.size:
        raise InvalidArgumentError(f"series lengths differ ({caller.size} vs {callee.size})")
    if caller.size < 2:
        raise InvalidArgumentError("correlation needs at least 2 points")

    if np.ptp(caller) == 0 or np.ptp(callee) == 0:
        return 0.5

    r = float(_CORRELATIONS[method](caller, callee)[0])
    if np.isnan(r):
        return 0.5
    r = min(1.0, max(-1.0, r))
    return (r + 1.0) / 2.0


def baseline_similarities(caller: StatusSeries, callee: StatusSeries, method) -> Dict[str, float]:
    """
    Mapped correlation of each KPI and their mean

    Returns:
        Dictionary with invo, err, dur and intensity
    """
    scores = {kpi: correlation_baseline(caller.kpi(kpi), callee.kpi(kpi), method) for kpi in KPIS}
    scores["intensity"] = (scores["invo"] + scores["err"] + scores["dur"]) / 3
    return scores
