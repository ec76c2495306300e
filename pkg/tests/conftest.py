import json

import numpy as np
import pytest

from app.config.logging_config import configure_logging
from app.services.span_model import Span, SpanCorpus
from app.services.status_generation import StatusSeries

MINUTE_US = 60_000_000


@pytest.fixture(autouse=True, scope="session")
def _quiet_logging():
    configure_logging("WARNING", "console")


def make_span(span_id, parent, service, timestamp_us, duration_us=10, result="SUCCESS", trace_id="t1"):
    return Span(
        span_id=span_id,
        parent_span_id=parent,
        trace_id=trace_id,
        service_name=service,
        timestamp_us=timestamp_us,
        duration_us=duration_us,
        result=result,
    )


def make_series(name, invo, err=None, dur=None, max_span_duration_us=0):
    invo = np.asarray(invo, dtype=float)
    return StatusSeries(
        service_name=name,
        invo=invo,
        err=np.asarray(err if err is not None else np.zeros_like(invo), dtype=float),
        dur=np.asarray(dur if dur is not None else np.zeros_like(invo), dtype=float),
        max_span_duration_us=max_span_duration_us,
    )


@pytest.fixture
def request_tree_spans():
    """One request: S0 calls S1, S2 and S3; S1 calls S4; S3 calls S5."""
    return [
        make_span("a", "", "S0", 0, 100),
        make_span("b", "a", "S1", 10, 40),
        make_span("c", "a", "S2", 20, 30),
        make_span("d", "a", "S3", 30, 50),
        make_span("e", "b", "S4", 15, 20),
        make_span("f", "d", "S5", 35, 10),
    ]


@pytest.fixture
def request_tree(request_tree_spans):
    return SpanCorpus.from_spans(request_tree_spans)


@pytest.fixture
def small_simulation_spec():
    return {
        "services": ["front", "db", "cache"],
        "edges": [
            {"caller": "front", "callee": "db", "dependency_kind": "strong"},
            {"caller": "front", "callee": "cache", "dependency_kind": "weak"},
        ],
        "request_rate_per_min": 30,
        "duration_min": 10,
        "fault_episodes": [
            {"service": "db", "start_min": 2, "end_min": 4, "error_prob": 0.6, "latency_multiplier": 2},
            {"service": "cache", "start_min": 6, "end_min": 8, "error_prob": 0.6, "latency_multiplier": 2},
        ],
        "base_latency_us": {"front": 5000, "db": 5000, "cache": 5000},
        "seed": 11,
    }


@pytest.fixture
def small_spec_file(tmp_path, small_simulation_spec):
    path = tmp_path / "small_spec.json"
    path.write_text(json.dumps(small_simulation_spec), encoding="utf-8")
    return path


def separation_spec() -> dict:
    """
    Three request entry points, six strong and four weak edges

    The shared service g is weakly called from everywhere, and each callee gets
    one fault episode of its own.
    """
    callees = ["a", "b", "c", "d", "e", "f", "g"]
    return {
        "services": ["r0", "r1", "r2"] + callees,
        "edges": [
            {"caller": "r0", "callee": "a", "dependency_kind": "strong"},
            {"caller": "a", "callee": "b", "dependency_kind": "strong"},
            {"caller": "r1", "callee": "c", "dependency_kind": "strong"},
            {"caller": "c", "callee": "d", "dependency_kind": "strong"},
            {"caller": "r2", "callee": "e", "dependency_kind": "strong"},
            {"caller": "e", "callee": "f", "dependency_kind": "strong"},
            {"caller": "r0", "callee": "g", "dependency_kind": "weak"},
            {"caller": "r1", "callee": "g", "dependency_kind": "weak"},
            {"caller": "r2", "callee": "g", "dependency_kind": "weak"},
            {"caller": "b", "callee": "g", "dependency_kind": "weak"},
        ],
        "request_rate_per_min": 200,
        "duration_min": 120,
        "fault_episodes": [
            {"service": service, "start_min": start, "end_min": start + 15, "error_prob": 0.5, "latency_multiplier": 3}
            for service, start in zip(callees, [5, 21, 37, 53, 69, 85, 101])
        ],
        "base_latency_us": {service: 5000 for service in ["r0", "r1", "r2"] + callees},
        "seed": 7,
    }
