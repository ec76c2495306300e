"""
Synthetic span generator with known strong/weak dependencies

Requests arrive at every root service as a homogeneous Poisson process and walk
the declared DAG. A strong callee's duration is added to its caller and its
failure fails the caller; a weak callee affects neither, like a call guarded by
fault tolerance.
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
import structlog
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from app.errors import CycleError, InputOutputError, InvalidInputError
from app.services.candidate_selection import CandidatePair
from app.services.evaluation import LabelSet
from app.services.span_model import Span, SpanCorpus, SpanResult, augment_parent_names

logger = structlog.get_logger(__name__)

US_PER_MIN = 60_000_000


class DependencyKind(str, Enum):
    STRONG = "strong"
    WEAK = "weak"


class EdgeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    caller: str = Field(min_length=1)
    callee: str = Field(min_length=1)
    dependency_kind: DependencyKind


class FaultEpisode(BaseModel):
    model_config = ConfigDict(frozen=True)

    service: str = Field(min_length=1)
    start_min: float = Field(ge=0)
    end_min: float
    error_prob: float = Field(ge=0, le=1)
    latency_multiplier: float = Field(default=1.0, ge=1)

    @model_validator(mode="after")
    def _window_is_ordered(self):
        if self.end_min <= self.start_min:
            raise ValueError(f"fault at {self.service}: end_min must be after start_min")
        return self

    def active(self, minute: float) -> bool:
        return self.start_min <= minute < self.end_min


class SimulationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    services: List[str] = Field(min_length=1)
    edges: List[EdgeSpec] = Field(default_factory=list)
    request_rate_per_min: PositiveFloat
    duration_min: PositiveInt
    fault_episodes: List[FaultEpisode] = Field(default_factory=list)
    base_latency_us: Dict[str, PositiveFloat] = Field(default_factory=dict)
    seed: int = 0
    # 2021-04-16T16:04:00Z, minute aligned
    start_time_us: NonNegativeInt = 1_618_589_040_000_000
    latency_sigma: float = Field(default=0.25, ge=0)
    default_latency_us: PositiveFloat = 10_000.0
    max_clock_drift_us: NonNegativeInt = 0

    @model_validator(mode="after")
    def _references_are_known(self):
        known = set(self.services)
        if len(known) != len(self.services):
            raise ValueError("service names must be unique")
        if any(not name for name in self.services):
            raise ValueError("service names must be non-empty")

        seen = set()
        for edge in self.edges:
            for name in (edge.caller, edge.callee):
                if name not in known:
                    raise ValueError(f"edge references unknown service {name!r}")
            if (edge.caller, edge.callee) in seen:
                raise ValueError(f"duplicate edge {edge.caller} -> {edge.callee}")
            seen.add((edge.caller, edge.callee))

        for episode in self.fault_episodes:
            if episode.service not in known:
                raise ValueError(f"fault episode references unknown service {episode.service!r}")
            if episode.end_min > self.duration_min:
                raise ValueError(
                    f"fault at {episode.service} ends at minute {episode.end_min}, after duration {self.duration_min}"
                )

        for name in self.base_latency_us:
            if name not in known:
                raise ValueError(f"base latency given for unknown service {name!r}")
        return self

    def latency_of(self, service: str) -> float:
        return self.base_latency_us.get(service, self.default_latency_us)


@dataclass(frozen=True)
class SimulationResult:
    corpus: SpanCorpus
    labels: LabelSet


def load_simulation_spec(path: Union[str, Path]) -> SimulationSpec:
    """
    Read a simulation spec from JSON

    Raises:
        InputOutputError: the file cannot be read
        InvalidInputError: malformed JSON or an invalid spec
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as e:
        raise InputOutputError(f"cannot read simulation spec {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"simulation spec {path} is not valid JSON: {e}") from e

    try:
        return SimulationSpec.model_validate(raw)
    except ValidationError as e:
        raise InvalidInputError(f"invalid simulation spec {path}: {e}") from e


def build_topology(spec: SimulationSpec) -> nx.DiGraph:
    """
    Directed call graph of a simulation spec

    Raises:
        CycleError: the edges do not form a DAG
    """
    topology = nx.DiGraph()
    topology.add_nodes_from(spec.services)
    for order, edge in enumerate(spec.edges):
        topology.add_edge(edge.caller, edge.callee, kind=edge.dependency_kind, order=order)

    if not nx.is_directed_acyclic_graph(topology):
        raise CycleError(nx.find_cycle(topology))
    return topology


class _TraceWriter:
    """Walks the topology for one request at a time and collects spans."""

    def __init__(self, spec: SimulationSpec, topology: nx.DiGraph, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.spans: List[Span] = []
        self._span_counter = 0
        self._trace_counter = 0

        self._callees = {
            service: sorted(topology.successors(service), key=lambda callee: topology[service][callee]["order"])
            for service in spec.services
        }
        self._kinds = {(caller, callee): data["kind"] for caller, callee, data in topology.edges(data=True)}
        self._faults: Dict[str, List[FaultEpisode]] = {}
        for episode in spec.fault_episodes:
            self._faults.setdefault(episode.service, []).append(episode)

        self._clock_offset = {service: 0 for service in spec.services}
        if spec.max_clock_drift_us:
            for service in spec.services:
                self._clock_offset[service] = int(
                    rng.integers(-spec.max_clock_drift_us, spec.max_clock_drift_us, endpoint=True)
                )

    def _next_span_id(self) -> str:
        self._span_counter += 1
        return f"{self._span_counter:016x}"

    def _fault_effect(self, service: str, minute: float) -> Tuple[float, float]:
        error_prob, multiplier = 0.0, 1.0
        for episode in self._faults.get(service, ()):
            if episode.active(minute):
                error_prob = max(error_prob, episode.error_prob)
                multiplier = max(multiplier, episode.latency_multiplier)
        return error_prob, multiplier

    def request(self, root: str, arrival_us: float) -> None:
        self._trace_counter += 1
        self._invoke(root, arrival_us, f"{self._trace_counter:032x}", None)

    def _invoke(self, service: str, start_us: float, trace_id: str, parent_span_id: Optional[str]) -> Tuple[float, bool]:
        span_id = self._next_span_id()
        minute = start_us / US_PER_MIN
        error_prob, multiplier = self._fault_effect(service, minute)

        own_us = self.rng.lognormal(mean=math.log(self.spec.latency_of(service)), sigma=self.spec.latency_sigma)
        own_us *= multiplier
        failed = error_prob > 0 and self.rng.random() < error_prob

        duration_us = own_us
        cursor = start_us
        for callee in self._callees[service]:
            callee_us, callee_failed = self._invoke(callee, cursor, trace_id, span_id)
            if self._kinds[(service, callee)] is DependencyKind.STRONG:
                duration_us += callee_us
                cursor += callee_us
                failed = failed or callee_failed

        self.spans.append(
            Span(
                span_id=span_id,
                parent_span_id=parent_span_id,
                trace_id=trace_id,
                service_name=service,
                timestamp_us=max(0, self.spec.start_time_us + int(start_us) + self._clock_offset[service]),
                duration_us=int(round(duration_us)),
                result=SpanResult.ERROR if failed else SpanResult.SUCCESS,
            )
        )
        return duration_us, failed


def poisson_arrivals(rng: np.random.Generator, rate_per_min: float, duration_min: int) -> List[float]:
    """Arrival offsets in microseconds of a homogeneous Poisson process on [0, duration)."""
    horizon_us = duration_min * US_PER_MIN
    mean_gap_us = US_PER_MIN / rate_per_min

    arrivals = []
    t = rng.exponential(mean_gap_us)
    while t < horizon_us:
        arrivals.append(t)
        t += rng.exponential(mean_gap_us)
    return arrivals


def simulate(spec: SimulationSpec) -> SimulationResult:
    """
    Generate a span corpus and its strong/weak labels from a topology

    The same spec (seed included) always yields the same output.

    Args:
        spec: Validated simulation spec

    Returns:
        Parent-augmented corpus and one label per declared edge

    Raises:
        CycleError: the topology is cyclic
    """
    topology = build_topology(spec)
    rng = np.random.default_rng(spec.seed)
    writer = _TraceWriter(spec, topology, rng)

    roots = [service for service in spec.services if topology.in_degree(service) == 0]
    for root in roots:
        for arrival_us in poisson_arrivals(rng, spec.request_rate_per_min, spec.duration_min):
            writer.request(root, arrival_us)

    spans = sorted(writer.spans, key=lambda span: (span.timestamp_us, span.span_id))
    corpus = augment_parent_names(SpanCorpus.from_spans(spans))

    labels = LabelSet({
        CandidatePair(edge.caller, edge.callee): 1.0 if edge.dependency_kind is DependencyKind.STRONG else 0.0
        for edge in spec.edges
    })

    logger.info(
        "simulation_generated",
        services=len(spec.services),
        roots=len(roots),
        edges=len(spec.edges),
        spans=len(corpus),
        seed=spec.seed,
    )
    return SimulationResult(corpus=corpus, labels=labels)
