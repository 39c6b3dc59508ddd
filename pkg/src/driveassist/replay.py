"""Headless scenario replay: scripted turns, expectation checks, metrics.

Replays run strictly sequentially on a virtual clock and never tick the
simulator between turns, so two runs of the same scenario with the rule
oracle produce byte-identical metrics CSVs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from driveassist.backend import BackendConfig, BackendKind
from driveassist.clock import Clock, VirtualClock
from driveassist.domain import DriverQuery
from driveassist.functioncall import parse_call, serialize_call
from driveassist.metrics import InvocationRecord, build_report, export
from driveassist.pipeline import TurnResult, build_pipeline
from driveassist.simulator import WorldScene, scene_from_strings

BUNDLED_SCENARIOS = ("turn2_example", "table2_sweep", "consistency_revisit")


class ScenarioError(Exception):
    """The scenario file is missing, unreadable, or malformed."""


@dataclass(frozen=True, slots=True)
class TurnExpectation:
    service_type: str | None = None
    response_contains: str | None = None
    executed_command: str | None = None


@dataclass(frozen=True, slots=True)
class ScenarioTurn:
    query_text: str
    scene: WorldScene | None = None
    expect: TurnExpectation | None = None


@dataclass(frozen=True, slots=True)
class Scenario:
    name: str
    scene: WorldScene
    initial_speed_mph: float
    backend: BackendConfig
    variability: bool
    seed: int
    turns: tuple[ScenarioTurn, ...]


def _parse_scene(obj: dict, where: str) -> WorldScene:
    try:
        return scene_from_strings(obj["road_type"], obj["weather"], obj["traffic"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: invalid scene: {exc}") from exc


def _parse_backend(obj: dict) -> BackendConfig:
    kind_raw = obj.get("kind", "rule_oracle")
    if kind_raw == "rule":
        kind_raw = "rule_oracle"
    try:
        kind = BackendKind(kind_raw)
    except ValueError as exc:
        raise ScenarioError(f"unknown backend kind {kind_raw!r}") from exc
    try:
        return BackendConfig(
            kind=kind,
            endpoint_url=obj.get("endpoint_url"),
            api_key_env=obj.get("api_key_env"),
            injected_delay_ms=obj.get("injected_delay_ms", {}),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file; bundled names resolve automatically."""
    resolved = Path(path)
    if not resolved.exists() and resolved.stem in BUNDLED_SCENARIOS and resolved.parent == Path("."):
        resolved = bundled_scenario_path(resolved.stem)
    try:
        raw = resolved.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: scenario must be an object")

    scene = _parse_scene(doc.get("scene", {}), "scenario")
    turns_raw = doc.get("turns")
    if not isinstance(turns_raw, list) or not turns_raw:
        raise ScenarioError(f"{path}: scenario needs at least one turn")
    turns = []
    for i, turn_raw in enumerate(turns_raw, start=1):
        if not isinstance(turn_raw, dict) or not str(turn_raw.get("query_text", "")).strip():
            raise ScenarioError(f"{path}: turn {i} needs query_text")
        expect_raw = turn_raw.get("expect")
        expect = None
        if expect_raw is not None:
            if not isinstance(expect_raw, dict):
                raise ScenarioError(f"{path}: turn {i} expect must be an object")
            expect = TurnExpectation(
                service_type=expect_raw.get("service_type"),
                response_contains=expect_raw.get("response_contains"),
                executed_command=expect_raw.get("executed_command"),
            )
        turn_scene = None
        if "scene" in turn_raw:
            turn_scene = _parse_scene(turn_raw["scene"], f"turn {i}")
        turns.append(
            ScenarioTurn(query_text=turn_raw["query_text"], scene=turn_scene, expect=expect)
        )
    return Scenario(
        name=Path(path).stem,
        scene=scene,
        initial_speed_mph=float(doc.get("initial_speed_mph", 0.0)),
        backend=_parse_backend(doc.get("backend", {})),
        variability=bool(doc.get("variability", False)),
        seed=int(doc.get("seed", 0)),
        turns=tuple(turns),
    )


def bundled_scenario_path(name: str) -> Path:
    if name not in BUNDLED_SCENARIOS:
        raise ScenarioError(f"unknown bundled scenario {name!r}")
    return Path(str(resources.files("driveassist").joinpath("scenarios", f"{name}.json")))


@dataclass(frozen=True, slots=True)
class TurnReport:
    index: int
    query_text: str
    result: TurnResult
    failures: tuple[str, ...]


@dataclass(frozen=True)
class ReplayResult:
    scenario_name: str
    turn_reports: tuple[TurnReport, ...]
    records: tuple[InvocationRecord, ...]

    @property
    def failures(self) -> tuple[str, ...]:
        return tuple(f for report in self.turn_reports for f in report.failures)

    @property
    def ok(self) -> bool:
        return not self.failures

    def metrics_csv(self) -> bytes:
        return export(build_report(self.records), "csv")


def _check_expectation(index: int, expect: TurnExpectation | None, result: TurnResult) -> tuple[str, ...]:
    if expect is None:
        return ()
    failures = []
    if expect.service_type is not None and result.service_type.value != expect.service_type:
        failures.append(
            f"turn {index}: expected service_type {expect.service_type}, "
            f"got {result.service_type.value}"
        )
    if expect.response_contains is not None and expect.response_contains not in result.response.text:
        failures.append(
            f"turn {index}: expected response to contain {expect.response_contains!r}, "
            f"got {result.response.text!r}"
        )
    if expect.executed_command is not None:
        try:
            expected_call = parse_call(expect.executed_command)
        except Exception as exc:
            failures.append(f"turn {index}: unparseable expected command: {exc}")
            return tuple(failures)
        got = [serialize_call(c) for c in result.executed_commands.calls]
        if serialize_call(expected_call) not in got:
            failures.append(
                f"turn {index}: expected executed command {serialize_call(expected_call)}, "
                f"got {got or 'none'}"
            )
    return tuple(failures)


def run_replay(scenario: Scenario, clock: Clock | None = None) -> ReplayResult:
    """Run all scenario turns through a fresh pipeline and check expectations."""
    clock = clock or VirtualClock()
    pipeline, simulator = build_pipeline(
        scenario.scene,
        scenario.initial_speed_mph,
        scenario.backend,
        clock=clock,
        variability=scenario.variability,
        seed=scenario.seed,
    )
    session = pipeline.new_session("replay")
    reports = []
    for index, turn in enumerate(scenario.turns, start=1):
        if turn.scene is not None:
            simulator.set_scene(turn.scene)
        query = DriverQuery(turn.query_text, clock.now_ms(), session.session_id)
        result = pipeline.handle_turn(session, query)
        reports.append(
            TurnReport(
                index=index,
                query_text=turn.query_text,
                result=result,
                failures=_check_expectation(index, turn.expect, result),
            )
        )
    return ReplayResult(
        scenario_name=scenario.name,
        turn_reports=tuple(reports),
        records=session.metrics.records(),
    )
