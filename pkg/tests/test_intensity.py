import json
import math

import numpy as np
import pytest

from app.errors import DuplicatePairError, InputOutputError, InvalidArgumentError, InvalidInputError
from app.services.candidate_selection import CandidatePair
from app.services.intensity import (
    INTENSITY_COLUMNS,
    Provenance,
    aggregate_intensity,
    baseline_record,
    build_graph,
    graph_to_dot,
    graph_to_json,
    infer_indirect,
    normalize_costs,
    read_intensities_csv,
    score_pairs,
    write_graph_dot,
    write_graph_json,
    write_intensities_csv,
)
from app.services.similarity import PairCosts


def costs(caller, callee, invo, err, dur):
    return PairCosts(pair=CandidatePair(caller, callee), cost_invo=invo, cost_err=err, cost_dur=dur, window_bins=1)


@pytest.fixture
def three_pairs():
    return [
        costs("a", "b", 0, 10, 5),
        costs("a", "c", 10, 0, 5),
        costs("b", "c", 5, 5, 5),
    ]


def test_min_max_per_kpi(three_pairs):
    normalized = normalize_costs(three_pairs)

    assert [(n.norm_invo, n.norm_err, n.norm_dur) for n in normalized] == [
        (0.0, 1.0, 0.0),
        (1.0, 0.0, 0.0),
        (0.5, 0.5, 0.0),
    ]


def test_infinite_cost_maps_to_one():
    normalized = normalize_costs([costs("a", "b", 1, 1, 1), costs("a", "c", math.inf, 3, 1)])
    assert normalized[1].norm_invo == 1.0
    assert normalized[0].norm_invo == 0.0


def test_single_pair_normalizes_to_zero():
    (normalized,) = normalize_costs([costs("a", "b", 7, 8, 9)])
    assert (normalized.norm_invo, normalized.norm_err, normalized.norm_dur) == (0.0, 0.0, 0.0)


def test_empty_or_all_infinite_is_fatal():
    with pytest.raises(InvalidInputError):
        normalize_costs([])
    with pytest.raises(InvalidInputError):
        normalize_costs([costs("a", "b", math.inf, 1, 1)])


def test_normalization_ignores_affine_rescaling(three_pairs):
    rescaled = [
        costs(c.pair.caller, c.pair.callee, 3 * c.cost_invo + 7, 3 * c.cost_err + 7, 3 * c.cost_dur + 7)
        for c in three_pairs
    ]
    assert [(n.norm_invo, n.norm_err, n.norm_dur) for n in normalize_costs(rescaled)] == [
        (n.norm_invo, n.norm_err, n.norm_dur) for n in normalize_costs(three_pairs)
    ]


def test_rescaling_one_kpi_of_float_costs_changes_nothing():
    rng = np.random.default_rng(42)
    original = [
        costs(f"s{index}", f"t{index}", *rng.uniform(0.0, 10.0, 3))
        for index in range(12)
    ]
    rescaled = [
        costs(c.pair.caller, c.pair.callee, 7 * c.cost_invo + 3, c.cost_err, c.cost_dur)
        for c in original
    ]

    before, after = score_pairs(original), score_pairs(rescaled)

    def outputs(records):
        return [
            (r.norm_invo, r.norm_err, r.norm_dur, r.sim_invo, r.sim_err, r.sim_dur, r.intensity)
            for r in records
        ]

    def ranking(records):
        return [r.pair for r in sorted(records, key=lambda r: (-r.intensity, r.pair))]

    assert outputs(after) == outputs(before)
    assert ranking(after) == ranking(before)


def test_aggregate_intensity():
    assert aggregate_intensity(0, 0, 0) == 1.0
    assert aggregate_intensity(1, 1, 1) == 0.0
    assert aggregate_intensity(0.5, 0, 1) == pytest.approx(0.5)
    with pytest.raises(InvalidArgumentError):
        aggregate_intensity(1.5, 0, 0)


def test_score_pairs(three_pairs):
    records = score_pairs(three_pairs)

    assert [record.intensity for record in records] == pytest.approx([2 / 3, 2 / 3, 2 / 3])
    assert records[2].sim_invo == 0.5
    assert all(0.0 <= record.intensity <= 1.0 for record in records)


def test_baseline_record_keeps_scores():
    record = baseline_record(CandidatePair("a", "b"), {"invo": 1.0, "err": 0.5, "dur": 0.0, "intensity": 0.5})
    assert record.intensity == pytest.approx(0.5)
    assert record.costs is None


def test_graph_holds_one_edge_per_record(three_pairs):
    graph = build_graph(score_pairs(three_pairs))

    assert graph.nodes == ["a", "b", "c"]
    assert [(edge.caller, edge.callee) for edge in graph.edges] == [("a", "b"), ("a", "c"), ("b", "c")]
    assert graph.intensity("a", "b") == pytest.approx(2 / 3)
    assert graph.intensity("c", "a") is None


def test_duplicate_record_is_fatal(three_pairs):
    records = score_pairs(three_pairs)
    with pytest.raises(DuplicatePairError):
        build_graph(records + records[:1])


def _chain_graph():
    return build_graph([
        baseline_record(CandidatePair("x", "y"), {"invo": 0.9, "err": 0.9, "dur": 0.9}),
        baseline_record(CandidatePair("y", "z"), {"invo": 0.8, "err": 0.8, "dur": 0.8}),
        baseline_record(CandidatePair("q", "r"), {"invo": 0.5, "err": 0.5, "dur": 0.5}),
    ])


def test_indirect_edges_use_the_path_product():
    inferred = infer_indirect(_chain_graph(), 0.5)

    assert inferred.intensity("x", "z") == pytest.approx(0.72)
    assert [edge.provenance for edge in inferred.edges if (edge.caller, edge.callee) == ("x", "z")] == [
        Provenance.INFERRED
    ]
    assert len(inferred.direct_edges()) == 3


def test_indirect_threshold_filters():
    assert infer_indirect(_chain_graph(), 0.75).intensity("x", "z") is None


def test_indirect_never_overrides_direct_edges():
    graph = build_graph([
        baseline_record(CandidatePair("x", "y"), {"invo": 1, "err": 1, "dur": 1}),
        baseline_record(CandidatePair("y", "z"), {"invo": 1, "err": 1, "dur": 1}),
        baseline_record(CandidatePair("x", "z"), {"invo": 0.1, "err": 0.1, "dur": 0.1}),
    ])
    assert infer_indirect(graph, 0.0).intensity("x", "z") == pytest.approx(0.1)


def test_indirect_takes_the_strongest_path():
    graph = build_graph([
        baseline_record(CandidatePair("s", "a"), {"invo": 0.5, "err": 0.5, "dur": 0.5}),
        baseline_record(CandidatePair("a", "t"), {"invo": 0.5, "err": 0.5, "dur": 0.5}),
        baseline_record(CandidatePair("s", "b"), {"invo": 0.9, "err": 0.9, "dur": 0.9}),
        baseline_record(CandidatePair("b", "t"), {"invo": 1.0, "err": 1.0, "dur": 1.0}),
    ])
    assert infer_indirect(graph, 0.0).intensity("s", "t") == pytest.approx(0.9)


def test_indirect_threshold_range():
    with pytest.raises(InvalidArgumentError):
        infer_indirect(_chain_graph(), 1.5)


def test_graph_exports(tmp_path):
    graph = infer_indirect(_chain_graph(), 0.5)

    payload = graph_to_json(graph)
    assert payload["nodes"] == ["q", "r", "x", "y", "z"]
    assert {edge["provenance"] for edge in payload["edges"]} == {"direct", "inferred"}

    dot = graph_to_dot(graph).source
    assert "0.720" in dot
    assert "dashed" in dot

    write_graph_json(graph, tmp_path / "graph.json")
    write_graph_dot(graph, tmp_path / "graph.dot")
    assert json.loads((tmp_path / "graph.json").read_text(encoding="utf-8")) == payload
    assert (tmp_path / "graph.dot").read_text(encoding="utf-8") == dot


def test_intensity_table(tmp_path, three_pairs):
    path = tmp_path / "intensities.csv"
    records = score_pairs(three_pairs)
    write_intensities_csv(records, path)

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(INTENSITY_COLUMNS)
    assert lines[1] == "a,b,0,10,5,1,0,1,0.666667"
    assert read_intensities_csv(path) == {record.pair: pytest.approx(record.intensity, abs=1e-6) for record in records}


def test_baseline_table_leaves_costs_empty(tmp_path):
    path = tmp_path / "intensities.csv"
    write_intensities_csv([baseline_record(CandidatePair("a", "b"), {"invo": 1, "err": 0.5, "dur": 0})], path)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "a,b,,,,1,0.5,0,0.5"


def test_intensity_table_needs_columns(tmp_path):
    path = tmp_path / "intensities.csv"
    path.write_text("caller,callee\na,b\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        read_intensities_csv(path)


@pytest.mark.parametrize("value", ["nan", "inf", "-inf", "1.5", "-0.1"])
def test_intensity_table_rejects_values_outside_unit_interval(tmp_path, value):
    path = tmp_path / "intensities.csv"
    path.write_text(f"caller,callee,intensity\na,b,0.5\na,c,{value}\n", encoding="utf-8")
    with pytest.raises(InvalidInputError, match="outside"):
        read_intensities_csv(path)


def test_intensity_table_bounds_are_inclusive(tmp_path):
    path = tmp_path / "intensities.csv"
    path.write_text("caller,callee,intensity\na,b,0\na,c,1\n", encoding="utf-8")
    assert read_intensities_csv(path) == {CandidatePair("a", "b"): 0.0, CandidatePair("a", "c"): 1.0}


def test_intensity_table_must_be_utf8(tmp_path):
    path = tmp_path / "intensities.csv"
    path.write_bytes(b"caller,callee,intensity\na,\xff\xfe,0.5\n")
    with pytest.raises(InputOutputError):
        read_intensities_csv(path)
