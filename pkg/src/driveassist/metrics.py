"""Per-invocation latency and token accounting, aggregation, and export.

Latency is attributed per pipeline module (refiner, vision, actuator,
responder); an entry exists exactly when the module executed in that turn.
The CSV export is the chart-ready artifact; the JSON export mirrors the
same fields.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from driveassist.backend import MODULE_NAMES, TokenUsage
from driveassist.domain import ServiceType


class OutOfOrder(Exception):
    """Record sequence_index is not strictly increasing."""


class EmptySeries(Exception):
    """Aggregation requires at least one record."""


class MalformedCsv(Exception):
    """A metrics CSV did not match the expected schema."""


CSV_HEADER = (
    "sequence_index",
    "service_type",
    "refiner_ms",
    "vision_ms",
    "actuator_ms",
    "responder_ms",
    "total_ms",
    "uplink_tokens",
    "downlink_tokens",
)


@dataclass(frozen=True)
class InvocationRecord:
    """Latency and token accounting for one conversational turn."""

    sequence_index: int
    service_type: ServiceType
    per_module_latency_ms: Mapping[str, float]
    total_ms: float
    uplink_tokens: int
    downlink_tokens: int
    per_module_tokens: Mapping[str, TokenUsage]

    def __post_init__(self) -> None:
        if self.sequence_index < 1:
            raise ValueError("sequence_index must be >= 1")
        object.__setattr__(self, "per_module_latency_ms", dict(self.per_module_latency_ms))
        object.__setattr__(self, "per_module_tokens", dict(self.per_module_tokens))
        unknown = set(self.per_module_latency_ms) - set(MODULE_NAMES)
        if unknown:
            raise ValueError(f"unknown module names: {sorted(unknown)}")
        if set(self.per_module_tokens) != set(self.per_module_latency_ms):
            raise ValueError("latency and token entries must cover the same modules")
        if self.total_ms + 1e-6 < sum(self.per_module_latency_ms.values()):
            raise ValueError("total_ms must cover the per-module latencies")
        if self.uplink_tokens != sum(u.uplink for u in self.per_module_tokens.values()):
            raise ValueError("uplink_tokens must equal the per-module sum")
        if self.downlink_tokens != sum(u.downlink for u in self.per_module_tokens.values()):
            raise ValueError("downlink_tokens must equal the per-module sum")


class MetricsStore:
    """Single-writer series of records for one session."""

    def __init__(self) -> None:
        self._records: list[InvocationRecord] = []

    def record(self, record: InvocationRecord) -> None:
        if self._records and record.sequence_index <= self._records[-1].sequence_index:
            raise OutOfOrder(
                f"sequence_index {record.sequence_index} after {self._records[-1].sequence_index}"
            )
        self._records.append(record)

    def records(self) -> tuple[InvocationRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)


@dataclass(frozen=True, slots=True)
class ServiceLatency:
    count: int
    mean_ms: float
    min_ms: float
    max_ms: float


@dataclass(frozen=True)
class Report:
    """Aggregates over an ordered record series."""

    records: tuple[InvocationRecord, ...]
    per_service: Mapping[ServiceType, ServiceLatency] = field(default_factory=dict)
    module_tokens: Mapping[str, TokenUsage] = field(default_factory=dict)

    @property
    def token_series(self) -> tuple[tuple[int, ServiceType, int, int], ...]:
        return tuple(
            (r.sequence_index, r.service_type, r.uplink_tokens, r.downlink_tokens)
            for r in self.records
        )


def build_report(records: Iterable[InvocationRecord]) -> Report:
    """Assemble a Report; an empty series yields an empty report."""
    ordered = tuple(sorted(records, key=lambda r: r.sequence_index))
    per_service: dict[ServiceType, ServiceLatency] = {}
    for service in ServiceType:
        totals = [r.total_ms for r in ordered if r.service_type is service]
        if totals:
            per_service[service] = ServiceLatency(
                count=len(totals),
                mean_ms=sum(totals) / len(totals),
                min_ms=min(totals),
                max_ms=max(totals),
            )
    module_tokens: dict[str, TokenUsage] = {}
    for record in ordered:
        for module, usage in record.per_module_tokens.items():
            module_tokens[module] = module_tokens.get(module, TokenUsage(0, 0)) + usage
    return Report(records=ordered, per_service=per_service, module_tokens=module_tokens)


def aggregate(records: Sequence[InvocationRecord]) -> Report:
    """Aggregate a non-empty record series; raises EmptySeries otherwise."""
    if not records:
        raise EmptySeries("no records to aggregate")
    return build_report(records)


def _row_for(record: InvocationRecord) -> list[str]:
    def cell(module: str) -> str:
        value = record.per_module_latency_ms.get(module)
        return "" if value is None else f"{value:.3f}"

    return [
        str(record.sequence_index),
        record.service_type.value,
        cell("refiner"),
        cell("vision"),
        cell("actuator"),
        cell("responder"),
        f"{record.total_ms:.3f}",
        str(record.uplink_tokens),
        str(record.downlink_tokens),
    ]


def export(report: Report, fmt: str = "csv") -> bytes:
    """Serialize the report's record series; deterministic byte-for-byte."""
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in report.records:
            writer.writerow(_row_for(record))
        return buffer.getvalue().encode("utf-8")
    if fmt == "interchange":
        rows = [dict(zip(CSV_HEADER, _row_for(record))) for record in report.records]
        return (json.dumps({"records": rows}, indent=2) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format {fmt!r}")


def parse_csv(data: bytes | str) -> list[dict]:
    """Parse an exported CSV back into plain row dicts (typed values).

    Raises MalformedCsv on header or value mismatches.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv("empty file") from None
    if tuple(header) != CSV_HEADER:
        raise MalformedCsv(f"unexpected header {header!r}")
    rows: list[dict] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise MalformedCsv(f"line {line_no}: expected {len(CSV_HEADER)} fields")
        try:
            rows.append(
                {
                    "sequence_index": int(row[0]),
                    "service_type": row[1],
                    "refiner_ms": float(row[2]) if row[2] else None,
                    "vision_ms": float(row[3]) if row[3] else None,
                    "actuator_ms": float(row[4]) if row[4] else None,
                    "responder_ms": float(row[5]) if row[5] else None,
                    "total_ms": float(row[6]),
                    "uplink_tokens": int(row[7]),
                    "downlink_tokens": int(row[8]),
                }
            )
        except ValueError as exc:
            raise MalformedCsv(f"line {line_no}: {exc}") from exc
    return rows
