import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import graphviz
import networkx as nx
import numpy as np
import pandas as pd
import structlog

from app.errors import DuplicatePairError, InputOutputError, InvalidArgumentError, InvalidInputError
from app.services.candidate_selection import CandidatePair
from app.services.similarity import PairCosts
from app.services.status_generation import KPIS

logger = structlog.get_logger(__name__)

INTENSITY_COLUMNS = [
    "caller", "callee",
    "cost_invo", "cost_err", "cost_dur",
    "sim_invo", "sim_err", "sim_dur",
    "intensity",
]


class Provenance(str, Enum):
    DIRECT = "direct"
    INFERRED = "inferred"


@dataclass(frozen=True)
class NormalizedCosts:
    pair: CandidatePair
    norm_invo: float
    norm_err: float
    norm_dur: float


@dataclass(frozen=True)
class IntensityRecord:
    pair: CandidatePair
    norm_invo: float
    norm_err: float
    norm_dur: float
    sim_invo: float
    sim_err: float
    sim_dur: float
    intensity: float
    costs: Optional[PairCosts] = None


def normalize_costs(all_costs: Sequence[PairCosts]) -> List[NormalizedCosts]:
    """
    Min-max normalize each KPI's costs across the whole candidate set

    +inf costs map to 1. When every finite cost of a KPI is equal they all map to 0.

    Raises:
        InvalidInputError: empty candidate set, or a KPI without any finite cost
    """
    if not all_costs:
        raise InvalidInputError("cannot normalize an empty candidate set")

    normalized = {}
    for kpi in KPIS:
        values = np.array([costs.cost(kpi) for costs in all_costs], dtype=float)
        finite = np.isfinite(values)
        if not finite.any():
            raise InvalidInputError(f"no finite {kpi} cost in the candidate set")

        lo, hi = values[finite].min(), values[finite].max()
        if hi == lo:
            normalized[kpi] = np.where(finite, 0.0, 1.0)
        else:
            # Invariant under affine rescaling of the costs
            scaled = np.round((np.where(finite, values, lo) - lo) / (hi - lo), 12)
            normalized[kpi] = np.where(finite, scaled, 1.0)

    return [
        NormalizedCosts(
            pair=costs.pair,
            norm_invo=float(normalized["invo"][index]),
            norm_err=float(normalized["err"][index]),
            norm_dur=float(normalized["dur"][index]),
        )
        for index, costs in enumerate(all_costs)
    ]


def aggregate_intensity(norm_invo: float, norm_err: float, norm_dur: float) -> float:
    """Average of the three similarities, each being 1 - normalized cost."""
    for value in (norm_invo, norm_err, norm_dur):
        if not 0.0 <= value <= 1.0:
            raise InvalidArgumentError(f"normalized cost {value} outside [0, 1]")
    return ((1.0 - norm_invo) + (1.0 - norm_err) + (1.0 - norm_dur)) / 3


def score_pairs(all_costs: Sequence[PairCosts]) -> List[IntensityRecord]:
    """Normalize the costs and aggregate one intensity record per pair."""
    records = []
    for costs, norm in zip(all_costs, normalize_costs(all_costs)):
        sim_invo, sim_err, sim_dur = 1.0 - norm.norm_invo, 1.0 - norm.norm_err, 1.0 - norm.norm_dur
        records.append(
            IntensityRecord(
                pair=costs.pair,
                norm_invo=norm.norm_invo,
                norm_err=norm.norm_err,
                norm_dur=norm.norm_dur,
                sim_invo=sim_invo,
                sim_err=sim_err,
                sim_dur=sim_dur,
                intensity=(sim_invo + sim_err + sim_dur) / 3,
                costs=costs,
            )
        )
    return records


def baseline_record(pair: CandidatePair, scores: Dict[str, float]) -> IntensityRecord:
    """Wrap baseline similarities (already in [0, 1]) as an intensity record without costs."""
    return IntensityRecord(
        pair=pair,
        norm_invo=1.0 - scores["invo"],
        norm_err=1.0 - scores["err"],
        norm_dur=1.0 - scores["dur"],
        sim_invo=scores["invo"],
        sim_err=scores["err"],
        sim_dur=scores["dur"],
        intensity=(scores["invo"] + scores["err"] + scores["dur"]) / 3,
    )


@dataclass(frozen=True)
class Edge:
    caller: str
    callee: str
    intensity: float
    provenance: Provenance
    sim_invo: Optional[float] = None
    sim_err: Optional[float] = None
    sim_dur: Optional[float] = None


class DependencyGraph:
    """Intensity-weighted service dependency graph backed by a networkx DiGraph."""

    def __init__(self, graph: nx.DiGraph = None):
        self.graph = graph if graph is not None else nx.DiGraph()

    @property
    def nodes(self) -> List[str]:
        return sorted(self.graph.nodes)

    @property
    def edges(self) -> List[Edge]:
        return [
            Edge(
                caller=caller,
                callee=callee,
                intensity=data["intensity"],
                provenance=data["provenance"],
                sim_invo=data.get("sim_invo"),
                sim_err=data.get("sim_err"),
                sim_dur=data.get("sim_dur"),
            )
            for caller, callee, data in sorted(self.graph.edges(data=True), key=lambda edge: (edge[0], edge[1]))
        ]

    def direct_edges(self) -> List[Edge]:
        return [edge for edge in self.edges if edge.provenance is Provenance.DIRECT]

    def intensity(self, caller: str, callee: str) -> Optional[float]:
        data = self.graph.get_edge_data(caller, callee)
        return None if data is None else data["intensity"]

    def copy(self) -> "DependencyGraph":
        return DependencyGraph(self.graph.copy())


def build_graph(records: Sequence[IntensityRecord]) -> DependencyGraph:
    """
    One direct edge per record; nodes are the union of callers and callees

    Raises:
        DuplicatePairError: two records for the same pair
    """
    graph = nx.DiGraph()
    for record in records:
        caller, callee = record.pair.caller, record.pair.callee
        if graph.has_edge(caller, callee):
            raise DuplicatePairError(f"duplicate intensity record for {record.pair}")
        graph.add_edge(
            caller,
            callee,
            intensity=record.intensity,
            provenance=Provenance.DIRECT,
            sim_invo=record.sim_invo,
            sim_err=record.sim_err,
            sim_dur=record.sim_dur,
        )
    return DependencyGraph(graph)


def infer_indirect(graph: DependencyGraph, threshold: float) -> DependencyGraph:
    """
    Add inferred edges by cascading conduction along direct edges

    The conducted intensity from X to Z is the maximum, over simple paths of at
    least two edges, of the product of edge intensities. An inferred edge is added
    when that value reaches the threshold and no direct X -> Z edge exists.

    Args:
        graph: Graph with direct edges only
        threshold: Minimum conducted intensity in [0, 1]

    Returns:
        New graph with the inferred edges added
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidArgumentError(f"indirect threshold {threshold} outside [0, 1]")

    direct = nx.DiGraph()
    direct.add_nodes_from(graph.graph.nodes)
    direct.add_edges_from(
        (caller, callee, data)
        for caller, callee, data in graph.graph.edges(data=True)
        if data["provenance"] is Provenance.DIRECT and caller != callee
    )

    inferred = graph.copy()
    added = 0
    for source in sorted(direct.nodes):
        for target in sorted(nx.descendants(direct, source)):
            if target == source or graph.graph.has_edge(source, target):
                continue

            best = None
            for path in nx.all_simple_paths(direct, source, target):
                if len(path) < 3:
                    continue
                conducted = 1.0
                for caller, callee in zip(path, path[1:]):
                    conducted *= direct[caller][callee]["intensity"]
                if best is None or conducted > best:
                    best = conducted

            if best is not None and best >= threshold:
                inferred.graph.add_edge(source, target, intensity=best, provenance=Provenance.INFERRED)
                added += 1

    logger.info("indirect_edges_inferred", inferred=added, threshold=threshold)
    return inferred


def graph_to_json(graph: DependencyGraph) -> Dict:
    return {
        "nodes": graph.nodes,
        "edges": [
            {
                "caller": edge.caller,
                "callee": edge.callee,
                "intensity": edge.intensity,
                "provenance": edge.provenance.value,
                "sim_invo": edge.sim_invo,
                "sim_err": edge.sim_err,
                "sim_dur": edge.sim_dur,
            }
            for edge in graph.edges
        ],
    }


def graph_to_dot(graph: DependencyGraph) -> graphviz.Digraph:
    """Edge labels carry the intensity rounded to 3 decimals; inferred edges are dashed."""
    dot = graphviz.Digraph(name="dependencies")
    for node in graph.nodes:
        dot.node(node, node)
    for edge in graph.edges:
        attrs = {"style": "dashed"} if edge.provenance is Provenance.INFERRED else {}
        dot.edge(edge.caller, edge.callee, label=f"{edge.intensity:.3f}", **attrs)
    return dot


def _write_text(path: Path, text: str, what: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise InputOutputError(f"cannot write {what} to {path}: {e.strerror or e}") from e


def write_graph_json(graph: DependencyGraph, path: Union[str, Path]) -> None:
    _write_text(Path(path), json.dumps(graph_to_json(graph), indent=2) + "\n", "graph JSON")


def write_graph_dot(graph: DependencyGraph, path: Union[str, Path]) -> None:
    _write_text(Path(path), graph_to_dot(graph).source, "graph DOT")


def _format_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:.6g}"


def write_intensities_csv(records: Sequence[IntensityRecord], path: Union[str, Path]) -> None:
    """
    Write the intensity table, 6 significant digits

    Cost columns stay empty for records without warping costs (correlation baselines).
    """
    rows = []
    for record in records:
        costs = record.costs
        rows.append({
            "caller": record.pair.caller,
            "callee": record.pair.callee,
            "cost_invo": _format_number(costs.cost_invo if costs else None),
            "cost_err": _format_number(costs.cost_err if costs else None),
            "cost_dur": _format_number(costs.cost_dur if costs else None),
            "sim_invo": _format_number(record.sim_invo),
            "sim_err": _format_number(record.sim_err),
            "sim_dur": _format_number(record.sim_dur),
            "intensity": _format_number(record.intensity),
        })

    frame = pd.DataFrame(rows, columns=INTENSITY_COLUMNS)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise InputOutputError(f"cannot write intensities to {path}: {e.strerror or e}") from e


def read_intensities_csv(path: Union[str, Path]) -> Dict[CandidatePair, float]:
    """
    Read pair intensities back from an intensity table

    Raises:
        InputOutputError: the file cannot be read or is not UTF-8
        InvalidInputError: missing columns, or an intensity that is not a finite number in [0, 1]
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise InputOutputError(f"intensity file {path} not found") from e
    except OSError as e:
        raise InputOutputError(f"cannot read intensity file {path}: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise InputOutputError(f"intensity file {path} is not valid UTF-8: {e.reason}") from e
    except pd.errors.EmptyDataError as e:
        raise InvalidInputError(f"intensity file {path} is empty") from e

    missing = [column for column in ("caller", "callee", "intensity") if column not in frame.columns]
    if missing:
        raise InvalidInputError(f"intensity file {path} lacks columns {missing}")

    predictions = {}
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            value = float(row.intensity)
        except ValueError as e:
            raise InvalidInputError(f"{path}:{row_number}: intensity {row.intensity!r} is not a number") from e
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise InvalidInputError(f"{path}:{row_number}: intensity {row.intensity!r} outside [0, 1]")
        pair = CandidatePair(row.caller, row.callee)
        if pair in predictions:
            raise DuplicatePairError(f"{path}:{row_number}: duplicate pair {pair}")
        predictions[pair] = value
    return predictions
