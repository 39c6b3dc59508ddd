"""Invocation records, aggregation, and CSV/JSON export."""

from __future__ import annotations

import pytest

from driveassist.backend import TokenUsage
from driveassist.domain import ServiceType
from driveassist.metrics import (
    CSV_HEADER,
    EmptySeries,
    InvocationRecord,
    MalformedCsv,
    MetricsStore,
    OutOfOrder,
    aggregate,
    build_report,
    export,
    parse_csv,
)


def _record(
    idx: int,
    service: ServiceType = ServiceType.CONVERSATIONAL_ONLY,
    total: float = 10.0,
    modules: dict | None = None,
) -> InvocationRecord:
    modules = modules if modules is not None else {"refiner": 4.0, "responder": 5.0}
    tokens = {m: TokenUsage(10, 2) for m in modules}
    return InvocationRecord(
        sequence_index=idx,
        service_type=service,
        per_module_latency_ms=modules,
        total_ms=total,
        uplink_tokens=sum(t.uplink for t in tokens.values()),
        downlink_tokens=sum(t.downlink for t in tokens.values()),
        per_module_tokens=tokens,
    )


def test_store_appends_in_order():
    store = MetricsStore()
    store.record(_record(1))
    assert len(store) == 1


def test_store_rejects_repeated_index():
    store = MetricsStore()
    store.record(_record(1))
    with pytest.raises(OutOfOrder):
        store.record(_record(1))


def test_store_holds_23_records():
    store = MetricsStore()
    for i in range(1, 24):
        store.record(_record(i))
    assert len(store.records()) == 23


def test_record_validates_total_covers_modules():
    with pytest.raises(ValueError):
        _record(1, total=1.0)


def test_record_validates_token_conservation():
    with pytest.raises(ValueError):
        InvocationRecord(
            sequence_index=1,
            service_type=ServiceType.CONVERSATIONAL_ONLY,
            per_module_latency_ms={"refiner": 1.0},
            total_ms=5.0,
            uplink_tokens=999,
            downlink_tokens=0,
            per_module_tokens={"refiner": TokenUsage(10, 0)},
        )


def test_record_rejects_unknown_module():
    with pytest.raises(ValueError):
        InvocationRecord(
            sequence_index=1,
            service_type=ServiceType.CONVERSATIONAL_ONLY,
            per_module_latency_ms={"parser": 1.0},
            total_ms=5.0,
            uplink_tokens=10,
            downlink_tokens=0,
            per_module_tokens={"parser": TokenUsage(10, 0)},
        )


def test_aggregate_single_record():
    report = aggregate([_record(1, total=3000.0)])
    stats = report.per_service[ServiceType.CONVERSATIONAL_ONLY]
    assert stats.mean_ms == 3000.0
    assert stats.count == 1


def test_aggregate_mean_of_two():
    report = aggregate([_record(1, total=2000.0), _record(2, total=4000.0)])
    assert report.per_service[ServiceType.CONVERSATIONAL_ONLY].mean_ms == 3000.0


def test_aggregate_mixed_types_independent():
    # Hand-computed on the 4-record fixture: ConversationalOnly mean (10+30)/2=20,
    # SceneAware mean (100+200)/2=150.
    records = [
        _record(1, ServiceType.CONVERSATIONAL_ONLY, total=10.0),
        _record(2, ServiceType.SCENE_AWARE, total=100.0,
                modules={"refiner": 2.0, "vision": 50.0, "responder": 3.0}),
        _record(3, ServiceType.CONVERSATIONAL_ONLY, total=30.0),
        _record(4, ServiceType.SCENE_AWARE, total=200.0,
                modules={"refiner": 2.0, "vision": 80.0, "responder": 3.0}),
    ]
    report = aggregate(records)
    assert report.per_service[ServiceType.CONVERSATIONAL_ONLY].mean_ms == 20.0
    assert report.per_service[ServiceType.SCENE_AWARE].mean_ms == 150.0
    assert report.per_service[ServiceType.SCENE_AWARE].min_ms == 100.0
    assert report.per_service[ServiceType.SCENE_AWARE].max_ms == 200.0


def test_aggregate_empty_raises():
    with pytest.raises(EmptySeries):
        aggregate([])


def test_export_header_only():
    data = export(build_report([]))
    assert data.decode() == ",".join(CSV_HEADER) + "\n"


def test_export_one_record_two_lines():
    data = export(build_report([_record(1)]))
    lines = data.decode().strip().split("\n")
    assert len(lines) == 2
    assert lines[1].startswith("1,ConversationalOnly,4.000,,,5.000,10.000,")


def test_export_deterministic():
    records = [_record(1), _record(2, ServiceType.SCENE_AWARE,
                                   modules={"refiner": 1.0, "vision": 2.0, "responder": 3.0},
                                   total=6.0)]
    assert export(build_report(records)) == export(build_report(records))


def test_export_interchange_mirrors_fields():
    import json

    data = export(build_report([_record(1)]), "interchange")
    doc = json.loads(data)
    assert list(doc["records"][0].keys()) == list(CSV_HEADER)


def test_csv_round_trip():
    records = [
        _record(1),
        _record(2, ServiceType.SCENE_AWARE,
                modules={"refiner": 1.5, "vision": 2.25, "responder": 3.0}, total=7.0),
    ]
    rows = parse_csv(export(build_report(records)))
    assert rows[0]["sequence_index"] == 1
    assert rows[0]["vision_ms"] is None
    assert rows[1]["vision_ms"] == 2.25
    assert rows[1]["service_type"] == "SceneAware"


def test_parse_csv_rejects_bad_header():
    with pytest.raises(MalformedCsv):
        parse_csv(b"a,b,c\n1,2,3\n")


def test_parse_csv_rejects_bad_values():
    good = export(build_report([_record(1)])).decode()
    broken = good.replace("10.000", "ten")
    with pytest.raises(MalformedCsv):
        parse_csv(broken)
