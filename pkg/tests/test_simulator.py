import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import CycleError, InvalidInputError
from app.services.candidate_selection import CandidatePair, select_candidates
from app.services.simulator import (
    FaultEpisode,
    SimulationSpec,
    build_topology,
    load_simulation_spec,
    poisson_arrivals,
    simulate,
)
from app.services.span_model import SpanResult
from app.services.status_generation import BinningConfig, generate_status


def test_same_seed_same_corpus(small_simulation_spec):
    spec = SimulationSpec.model_validate(small_simulation_spec)

    first, second = simulate(spec), simulate(spec)

    assert [span.to_record() for span in first.corpus.spans] == [span.to_record() for span in second.corpus.spans]
    assert first.labels == second.labels


def test_other_seed_other_corpus(small_simulation_spec):
    first = simulate(SimulationSpec.model_validate(small_simulation_spec))
    second = simulate(SimulationSpec.model_validate(dict(small_simulation_spec, seed=12)))
    assert [span.to_record() for span in first.corpus.spans] != [span.to_record() for span in second.corpus.spans]


def test_labels_follow_edge_kinds(small_simulation_spec):
    result = simulate(SimulationSpec.model_validate(small_simulation_spec))
    assert result.labels.labels == {CandidatePair("front", "db"): 1.0, CandidatePair("front", "cache"): 0.0}


def test_candidates_are_the_declared_edges(small_simulation_spec):
    result = simulate(SimulationSpec.model_validate(small_simulation_spec))

    assert result.corpus.augmented
    assert result.corpus.orphan_count == 0
    assert set(select_candidates(result.corpus)) == set(result.labels.labels)


def test_parents_stay_within_their_trace(small_simulation_spec):
    corpus = simulate(SimulationSpec.model_validate(small_simulation_spec)).corpus
    by_id = {span.span_id: span for span in corpus.spans}

    for span in corpus.spans:
        if span.parent_span_id is not None:
            assert by_id[span.parent_span_id].trace_id == span.trace_id
    assert [span.timestamp_us for span in corpus.spans] == sorted(span.timestamp_us for span in corpus.spans)


def test_strong_callees_propagate_and_weak_ones_do_not(small_simulation_spec):
    corpus = simulate(SimulationSpec.model_validate(small_simulation_spec)).corpus
    children = {}
    for span in corpus.spans:
        if span.parent_span_id is not None:
            children.setdefault(span.parent_span_id, {})[span.service_name] = span

    front_spans = [span for span in corpus.spans if span.service_name == "front"]
    assert front_spans
    for front in front_spans:
        db, cache = children[front.span_id]["db"], children[front.span_id]["cache"]
        assert front.duration_us >= db.duration_us
        if db.result is SpanResult.ERROR:
            assert front.result is SpanResult.ERROR
        if front.result is SpanResult.ERROR:
            assert db.result is SpanResult.ERROR

    assert any(span.result is SpanResult.ERROR for span in corpus.spans if span.service_name == "cache")


def test_no_faults_no_errors(small_simulation_spec):
    spec = SimulationSpec.model_validate(dict(small_simulation_spec, fault_episodes=[]))
    assert all(span.result is SpanResult.SUCCESS for span in simulate(spec).corpus.spans)


def test_clock_drift_keeps_the_corpus_valid(small_simulation_spec):
    spec = SimulationSpec.model_validate(dict(small_simulation_spec, max_clock_drift_us=30_000_000))
    corpus = simulate(spec).corpus
    assert len(select_candidates(corpus)) == 2


def test_cyclic_topology_is_rejected(small_simulation_spec):
    edges = small_simulation_spec["edges"] + [{"caller": "db", "callee": "front", "dependency_kind": "weak"}]
    spec = SimulationSpec.model_validate(dict(small_simulation_spec, edges=edges))

    with pytest.raises(CycleError) as excinfo:
        build_topology(spec)
    assert "front" in str(excinfo.value) and "db" in str(excinfo.value)


@pytest.mark.parametrize("change", [
    {"services": []},
    {"services": ["front", "front", "db", "cache"]},
    {"edges": [{"caller": "front", "callee": "ghost", "dependency_kind": "strong"}]},
    {"request_rate_per_min": 0},
    {"fault_episodes": [{"service": "db", "start_min": 9, "end_min": 12, "error_prob": 0.5}]},
])
def test_invalid_specs(tmp_path, small_simulation_spec, change):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(dict(small_simulation_spec, **change)), encoding="utf-8")
    with pytest.raises(InvalidInputError):
        load_simulation_spec(path)


def test_fault_window_must_be_ordered():
    with pytest.raises(ValidationError):
        FaultEpisode(service="db", start_min=3, end_min=3, error_prob=0.5)


def test_load_spec(small_spec_file):
    spec = load_simulation_spec(small_spec_file)
    assert spec.services == ["front", "db", "cache"]
    assert spec.seed == 11


def test_poisson_arrivals():
    arrivals = poisson_arrivals(np.random.default_rng(3), 120, 50)

    assert arrivals == sorted(arrivals)
    assert all(0 <= arrival < 50 * 60_000_000 for arrival in arrivals)
    assert 5400 < len(arrivals) < 6600


def _minute_status(spec, **overrides):
    spec = SimulationSpec.model_validate(dict(spec, **overrides))
    corpus = simulate(spec).corpus
    config = BinningConfig(
        bin_size_us=60_000_000,
        period_start_us=spec.start_time_us,
        period_end_us=spec.start_time_us + spec.duration_min * 60_000_000 + 60_000_000,
    )
    return corpus, generate_status(corpus, config)


def test_caller_errors_stay_inside_the_strong_callee_fault(small_simulation_spec):
    _, status = _minute_status(small_simulation_spec)
    front_err = status["front"].err

    # db faults in minutes 2-3, cache (weak) in minutes 6-7
    outside = np.ones(front_err.size, dtype=bool)
    outside[2:4] = False
    assert front_err[outside].sum() == 0.0
    assert status["cache"].err[6:8].sum() > 0.0


def test_strong_caller_err_rises_during_callee_fault(small_simulation_spec):
    _, status = _minute_status(small_simulation_spec)
    front_err = status["front"].err

    inside = front_err[2:4]
    outside = np.concatenate([front_err[:2], front_err[4:]])
    assert inside.min() > 0.0
    assert inside.mean() > outside.mean()


def test_error_mass_matches_error_spans(small_simulation_spec):
    corpus, status = _minute_status(small_simulation_spec)

    for service, series in status.items():
        errors = sum(1 for span in corpus.spans if span.service_name == service and span.result is SpanResult.ERROR)
        assert float(np.sum(series.invo * series.err)) == pytest.approx(errors, abs=1e-9)
    assert sum(float(np.sum(series.invo)) for series in status.values()) == len(corpus)
