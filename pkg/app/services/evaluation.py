import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy import stats

from app.config.config import settings
from app.errors import EvaluationError, InputOutputError, InvalidArgumentError, InvalidInputError
from app.services.candidate_selection import CandidatePair

logger = structlog.get_logger(__name__)

METHOD_TAGS = ("aid_dsw", "aid_dtw", "pearson", "spearman", "kendall")

LABEL_VALUES = {"strong": 1.0, "weak": 0.0}


@dataclass(frozen=True)
class LabelSet:
    """Strong (1.0) / weak (0.0) label per candidate pair."""

    labels: Dict[CandidatePair, float] = field(default_factory=dict)

    def __post_init__(self):
        for pair, value in self.labels.items():
            if value not in (0.0, 1.0):
                raise InvalidInputError(f"label of {pair} must be 0.0 or 1.0, got {value}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def pairs(self) -> List[CandidatePair]:
        return sorted(self.labels)


@dataclass(frozen=True)
class EvalReport:
    method: str
    ce: float
    mae: float
    rmse: float
    n_pairs_scored: int
    auc: Optional[float] = None
    missing_pairs: Tuple[CandidatePair, ...] = ()

    def to_dict(self) -> Dict:
        report = asdict(self)
        report["missing_pairs"] = [[pair.caller, pair.callee] for pair in self.missing_pairs]
        return report


def _as_arrays(y: Sequence[float], p: Sequence[float]):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise InvalidArgumentError(f"labels and predictions differ in length ({y.size} vs {p.size})")
    if y.size == 0:
        raise InvalidArgumentError("metrics need at least one pair")
    return y, p


def cross_entropy(y: Sequence[float], p: Sequence[float], epsilon: float = None) -> float:
    """
    Mean negative log-likelihood of the labels

    Predictions are clamped to [epsilon, 1 - epsilon] first, so the result never
    exceeds -ln(epsilon).
    """
    epsilon = settings.CE_EPSILON if epsilon is None else epsilon
    y, p = _as_arrays(y, p)
    p = np.clip(p, epsilon, 1.0 - epsilon)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def mae(y: Sequence[float], p: Sequence[float]) -> float:
    y, p = _as_arrays(y, p)
    return float(np.mean(np.abs(y - p)))


def rmse(y: Sequence[float], p: Sequence[float]) -> float:
    y, p = _as_arrays(y, p)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def separation_auc(y: Sequence[float], p: Sequence[float]) -> Optional[float]:
    """
    ROC AUC from the rank-sum statistic, None unless both classes are present

    1.0 means every strong pair is ranked above every weak pair.
    """
    y, p = _as_arrays(y, p)
    positives = y == 1.0
    n_pos, n_neg = int(positives.sum()), int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(p)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(
    predictions: Mapping[CandidatePair, float],
    labels: LabelSet,
    method_tag: str,
    epsilon: float = None,
) -> EvalReport:
    """
    Score predictions over the pairs that are both predicted and labeled

    Args:
        predictions: Intensity per pair
        labels: Ground truth labels
        method_tag: One of METHOD_TAGS
        epsilon: Cross entropy clamp, defaults to settings.CE_EPSILON

    Returns:
        Evaluation report; labeled pairs without a prediction are listed and logged

    Raises:
        EvaluationError: no pair is both predicted and labeled
    """
    if method_tag not in METHOD_TAGS:
        raise InvalidArgumentError(f"unknown method {method_tag!r}, expected one of {', '.join(METHOD_TAGS)}")

    scored = sorted(set(predictions) & set(labels.labels))
    missing = tuple(sorted(set(labels.labels) - set(predictions)))
    for pair in missing:
        logger.warning("labeled_pair_not_predicted", caller=pair.caller, callee=pair.callee, method=method_tag)

    if not scored:
        raise EvaluationError("no candidate pair is both predicted and labeled")

    y = [labels.labels[pair] for pair in scored]
    p = [predictions[pair] for pair in scored]

    report = EvalReport(
        method=method_tag,
        ce=cross_entropy(y, p, epsilon),
        mae=mae(y, p),
        rmse=rmse(y, p),
        n_pairs_scored=len(scored),
        auc=separation_auc(y, p),
        missing_pairs=missing,
    )
    logger.info("evaluated", method=method_tag, pairs=report.n_pairs_scored, ce=report.ce, mae=report.mae, rmse=report.rmse)
    return report


def load_labels(path: Union[str, Path]) -> LabelSet:
    """
    Read a "caller,callee,label" CSV with label strong or weak

    Raises:
        InputOutputError: the file cannot be read or is not UTF-8
        InvalidInputError: bad header, unknown label or a duplicate pair
    """
    path = Path(path)
    labels = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [column.strip() for column in header] != ["caller", "callee", "label"]:
                raise InvalidInputError(f"{path}: header must be caller,callee,label")
            for row in reader:
                if not row:
                    continue
                if len(row) != 3:
                    raise InvalidInputError(f"{path}:{reader.line_num}: expected 3 columns, got {len(row)}")
                caller, callee, label = (value.strip() for value in row)
                if label.lower() not in LABEL_VALUES:
                    raise InvalidInputError(f"{path}:{reader.line_num}: label must be strong or weak, got {label!r}")
                pair = CandidatePair(caller, callee)
                if pair in labels:
                    raise InvalidInputError(f"{path}:{reader.line_num}: duplicate label for {pair}")
                labels[pair] = LABEL_VALUES[label.lower()]
    except OSError as e:
        raise InputOutputError(f"cannot read labels file {path}: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise InputOutputError(f"labels file {path} is not UTF-8: {e.reason}") from e

    return LabelSet(labels)


def write_labels(labels: LabelSet, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["caller", "callee", "label"])
            for pair in labels.pairs:
                writer.writerow([pair.caller, pair.callee, "strong" if labels.labels[pair] == 1.0 else "weak"])
    except OSError as e:
        raise InputOutputError(f"cannot write labels file {path}: {e.strerror or e}") from e


def format_table(reports: Sequence[EvalReport], row_label: str = "Method", rows: Sequence[str] = None) -> str:
    """Aligned text table, one row per report, columns CE, MAE and RMSE."""
    frame = pd.DataFrame(
        {
            row_label: list(rows) if rows is not None else [report.method for report in reports],
            "CE": [report.ce for report in reports],
            "MAE": [report.mae for report in reports],
            "RMSE": [report.rmse for report in reports],
        }
    )
    return frame.to_string(index=False, float_format=lambda value: f"{value:.4f}")


def write_report_json(reports: Sequence[EvalReport], path: Union[str, Path], extra: Dict = None) -> None:
    payload = {"reports": [report.to_dict() for report in reports]}
    if extra:
        payload.update(extra)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise InputOutputError(f"cannot write report to {path}: {e.strerror or e}") from e
