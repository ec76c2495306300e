from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, Tuple, Union

import structlog

from app.errors import InputOutputError, InvalidInputError
from app.services.span_model import SpanCorpus

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, order=True)
class CandidatePair:
    """Ordered (caller, callee) pair; ordering is lexicographic by caller then callee."""

    caller: str
    callee: str

    def __post_init__(self):
        if not self.caller or not self.callee:
            raise InvalidInputError(f"candidate pair needs non-empty names, got ({self.caller!r}, {self.callee!r})")

    def __str__(self) -> str:
        return f"{self.caller}->{self.callee}"


@dataclass(frozen=True)
class CandidateSet:
    """Set of candidate pairs, iterated in lexicographic order."""

    pairs: Tuple[CandidatePair, ...] = ()

    @classmethod
    def from_pairs(cls, pairs: Iterable[CandidatePair]) -> "CandidateSet":
        return cls(pairs=tuple(sorted(set(pairs))))

    def __iter__(self) -> Iterator[CandidatePair]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair) -> bool:
        return pair in self.pairs


def select_candidates(corpus: SpanCorpus) -> CandidateSet:
    """
    Collect (parent service, service) for every span whose parent resolved

    A service calling itself yields a self-pair, which is kept.

    Args:
        corpus: Parent-augmented corpus

    Returns:
        Candidate set in lexicographic order
    """
    if not corpus.augmented:
        raise InvalidInputError("select_candidates needs a parent-augmented corpus")

    pairs = {
        CandidatePair(span.parent_service_name, span.service_name)
        for span in corpus.spans
        if span.parent_service_name is not None
    }
    candidates = CandidateSet.from_pairs(pairs)

    logger.info("candidates_selected", pairs=len(candidates), spans=len(corpus))
    return candidates


def merge_candidate_sets(*sets: CandidateSet) -> CandidateSet:
    """Union of partial candidate sets, e.g. one per shard of spans."""
    return CandidateSet.from_pairs(pair for candidates in sets for pair in candidates)


def candidate_summary(candidates: CandidateSet) -> Dict[str, int]:
    """
    Count the services on each side of the candidate set

    Returns:
        Dictionary with pair, caller, callee, overlap and one-sided counts
    """
    callers = {pair.caller for pair in candidates}
    callees = {pair.callee for pair in candidates}

    return {
        "pairs": len(candidates),
        "callers": len(callers),
        "callees": len(callees),
        "callers_and_callees": len(callers & callees),
        "callee_only": len(callees - callers),
        "caller_only": len(callers - callees),
    }


def write_candidates(candidates: CandidateSet, path: Union[str, Path]) -> None:
    """Write one "caller<TAB>callee" line per pair."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for pair in candidates:
                handle.write(f"{pair.caller}\t{pair.callee}\n")
    except OSError as e:
        raise InputOutputError(f"cannot write candidates to {path}: {e.strerror or e}") from e
