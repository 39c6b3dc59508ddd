"""One-turn orchestration: refine, retrieve context or execute, respond.

Routing follows the refined query's metadata flags: actuation turns generate
and dispatch a validated command and acknowledge it; sensing turns retrieve
scene and motion context before responding and leave a pending proposal;
everything else is answered directly. Each turn produces an
InvocationRecord with per-module latencies and summed token usage.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Callable

from driveassist.backend import (
    BackendConfig,
    ModelBackend,
    ModelRequest,
    Role,
    STANDARD_OUTPUT_CAP,
    TokenUsage,
    VISION_OUTPUT_CAP,
    build_prompt,
)
from driveassist.clock import Clock, MonotonicClock
from driveassist.domain import (
    AdasCommandSet,
    AssistantResponse,
    DialogueHistory,
    DialogueTurn,
    DriverQuery,
    DrivingContext,
    MotionState,
    QueryMetadata,
    RefinedQuery,
    Role as TurnRole,
    ServiceType,
    append_turn,
    classify_service_type,
    render_history,
)
from driveassist.functioncall import (
    DispatchError,
    FunctionCall,
    FunctionRegistry,
    ParseError,
    ShapeError,
    ValidationError,
    built_in_registry,
    extract_balanced_object,
    parse_call,
    serialize_call,
)
from driveassist.metrics import InvocationRecord, MetricsStore
from driveassist.perception import describe_scene
from driveassist.simulator import (
    SimConfig,
    SimulatorUnavailable,
    VehicleSimulator,
    WorldScene,
)

_PROPOSAL_RE = re.compile(r"setting the speed to (\d+) MPH")
_CONFIRM_QUESTION = "apply this setting?"


class TurnInFlight(Exception):
    """A second turn was submitted while one is already being handled."""


@dataclass
class Session:
    """Mutable per-driver conversation state, owned by exactly one pipeline."""

    session_id: str
    history: DialogueHistory
    pending_action: FunctionCall | None = None
    metrics: MetricsStore = field(default_factory=MetricsStore)
    turn_count: int = 0
    vision_calls: int = 0
    _gate: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def begin_turn(self) -> bool:
        return self._gate.acquire(blocking=False)

    def end_turn(self) -> None:
        self._gate.release()


@dataclass(frozen=True, slots=True)
class TurnResult:
    response: AssistantResponse
    executed_commands: AdasCommandSet
    record: InvocationRecord
    service_type: ServiceType


def instrument(clock: Clock, module_name: str, thunk: Callable[[], object],
               sink: Callable[[str, float], None]):
    """Time a module call; the sample is recorded even when the call raises."""
    start = clock.now_ms()
    try:
        result = thunk()
    except BaseException:
        sink(module_name, clock.now_ms() - start)
        raise
    latency = clock.now_ms() - start
    sink(module_name, latency)
    return result, latency


class AgentPipeline:
    """Per-session turn orchestrator over a shared vehicle and backend."""

    def __init__(
        self,
        simulator: VehicleSimulator,
        backend: ModelBackend,
        registry: FunctionRegistry,
        *,
        clock: Clock | None = None,
        documents: tuple[str, ...] = (),
        variability: bool = False,
        seed: int = 0,
        max_history_turns: int = 20,
        standard_cap: int = STANDARD_OUTPUT_CAP,
        vision_cap: int = VISION_OUTPUT_CAP,
    ) -> None:
        self._simulator = simulator
        self._backend = backend
        self._registry = registry
        self._clock = clock or MonotonicClock()
        self._documents = tuple(documents)
        self._variability = variability
        self._seed = seed
        self._max_history_turns = max_history_turns
        self._standard_cap = standard_cap
        self._vision_cap = vision_cap

    @property
    def clock(self) -> Clock:
        return self._clock

    @property
    def simulator(self) -> VehicleSimulator:
        return self._simulator

    def new_session(self, session_id: str) -> Session:
        return Session(
            session_id=session_id,
            history=DialogueHistory(max_turns=self._max_history_turns),
        )

    def handle_turn(self, session: Session, query: DriverQuery) -> TurnResult:
        """Run one conversational turn; only one may be in flight per session."""
        if not session.begin_turn():
            raise TurnInFlight(f"session {session.session_id} already has a turn in flight")
        try:
            return self._run_turn(session, query)
        finally:
            session.end_turn()

    # ------------------------------------------------------------------
    # Turn execution
    # ------------------------------------------------------------------

    def _run_turn(self, session: Session, query: DriverQuery) -> TurnResult:
        latencies: dict[str, float] = {}
        tokens: dict[str, TokenUsage] = {}
        sink = latencies.__setitem__
        started = self._clock.now_ms()
        history_rendered = render_history(session.history)

        refiner_prompt = build_prompt({"history": history_rendered, "query": query.text})
        refiner_resp, _ = instrument(
            self._clock,
            "refiner",
            lambda: self._backend.complete(
                ModelRequest(Role.REFINER, refiner_prompt, self._standard_cap)
            ),
            sink,
        )
        tokens["refiner"] = refiner_resp.usage
        refined = self._parse_refined(refiner_resp.text, query)
        service = classify_service_type(refined.metadata)

        executed: list[FunctionCall] = []
        context: DrivingContext | None = None
        executed_ack: str | None = None

        if refined.metadata.actuation_required:
            executed_ack = self._actuate(session, refined, executed, latencies, tokens)
        elif refined.metadata.sensing_required:
            context, _ = instrument(
                self._clock, "vision", lambda: self.retrieve_context(refined, session), sink
            )
            tokens["vision"] = TokenUsage(0, 0)

        sections = {"history": history_rendered, "query": refined.text}
        if context is not None:
            sections["context"] = _render_context(context)
        if executed_ack is not None:
            sections["executed"] = executed_ack
        cap = self._vision_cap if context is not None else self._standard_cap
        responder_prompt = build_prompt(sections)
        responder_resp, _ = instrument(
            self._clock,
            "responder",
            lambda: self._backend.complete(
                ModelRequest(Role.RESPONDER, responder_prompt, cap)
            ),
            sink,
        )
        tokens["responder"] = responder_resp.usage
        response_text = responder_resp.text

        proposed: FunctionCall | None = None
        if refined.metadata.actuation_required:
            session.pending_action = None
        elif refined.metadata.sensing_required:
            proposed = _extract_proposal(response_text)
            session.pending_action = proposed
        else:
            session.pending_action = None

        next_index = session.history.turns[-1].turn_index + 1 if session.history.turns else 0
        session.history = append_turn(
            session.history, DialogueTurn(TurnRole.DRIVER, query.text, None, next_index)
        )
        session.history = append_turn(
            session.history,
            DialogueTurn(TurnRole.ASSISTANT, response_text, service, next_index + 1),
        )

        total = max(self._clock.now_ms() - started, sum(latencies.values()))
        record = InvocationRecord(
            sequence_index=session.turn_count + 1,
            service_type=service,
            per_module_latency_ms=latencies,
            total_ms=total,
            uplink_tokens=sum(u.uplink for u in tokens.values()),
            downlink_tokens=sum(u.downlink for u in tokens.values()),
            per_module_tokens=tokens,
        )
        session.metrics.record(record)
        session.turn_count += 1

        return TurnResult(
            response=AssistantResponse(text=response_text, proposed_action=proposed),
            executed_commands=AdasCommandSet(tuple(executed)),
            record=record,
            service_type=service,
        )

    def _actuate(
        self,
        session: Session,
        refined: RefinedQuery,
        executed: list[FunctionCall],
        latencies: dict[str, float],
        tokens: dict[str, TokenUsage],
    ) -> str:
        """Generate, validate, and dispatch the confirmed command; return the ack.

        Validation or dispatch failures abort actuation and surface as an
        explanatory acknowledgment rather than a dropped turn.
        """
        pending = session.pending_action
        if pending is None:
            return "There is no pending action to confirm."
        commander_prompt = build_prompt(
            {"pending": serialize_call(pending), "confirmation": refined.text}
        )
        commander_resp, _ = instrument(
            self._clock,
            "actuator",
            lambda: self._backend.complete(
                ModelRequest(Role.COMMANDER, commander_prompt, self._standard_cap)
            ),
            latencies.__setitem__,
        )
        tokens["actuator"] = commander_resp.usage
        try:
            call = parse_call(commander_resp.text)
            self._registry.validate(call)
            ack = self._registry.dispatch(call)
            executed.append(call)
            return ack
        except (ParseError, ShapeError, ValidationError, DispatchError) as exc:
            return f"Unable to execute the command: {exc}"

    def retrieve_context(self, refined: RefinedQuery, session: Session) -> DrivingContext:
        """Gather vision, motion, and document context for a sensing turn."""
        assert refined.metadata.sensing_required, "retrieve_context requires sensing_required"
        delay = self._backend.config.injected_delay_ms.get("vision", 0)
        if delay:
            self._clock.sleep_ms(delay)
        try:
            telemetry = self._simulator.telemetry()
            scene = self._simulator.scene
        except Exception as exc:
            raise SimulatorUnavailable(str(exc)) from exc
        description = describe_scene(
            scene, self._variability, self._seed + session.vision_calls
        )
        session.vision_calls += 1
        return DrivingContext(
            vision=description.text,
            motion=MotionState(speed_mph=telemetry.speed_mph),
            documents=self._documents,
        )

    @staticmethod
    def _parse_refined(text: str, query: DriverQuery) -> RefinedQuery:
        """Decode the refiner's output; degrade to a plain conversational turn
        when a remote backend produced something unusable."""
        raw = extract_balanced_object(text)
        if raw is not None:
            try:
                obj = json.loads(raw)
                refined_text = str(obj.get("refined_text") or "").strip() or query.text
                metadata = QueryMetadata(
                    sensing_required=bool(obj.get("sensing_required", False)),
                    actuation_required=bool(obj.get("actuation_required", False)),
                )
                return RefinedQuery(text=refined_text, metadata=metadata, source=query)
            except (json.JSONDecodeError, TypeError):
                pass
        return RefinedQuery(text=query.text, metadata=QueryMetadata(False, False), source=query)


def _render_context(context: DrivingContext) -> str:
    lines = []
    if context.vision is not None:
        lines.append(f"vision: {context.vision}")
    if context.motion is not None:
        speed = context.motion.speed_mph
        rendered = str(int(speed)) if float(speed).is_integer() else str(round(speed, 1))
        lines.append(f"motion: current speed {rendered} MPH")
    if context.documents:
        lines.append("documents: " + " | ".join(context.documents))
    return "\n".join(lines)


def _extract_proposal(response_text: str) -> FunctionCall | None:
    """Pending proposal implied by a responder reply, if it asks for confirmation."""
    if _CONFIRM_QUESTION not in response_text:
        return None
    match = _PROPOSAL_RE.search(response_text)
    if match is None:
        return None
    return FunctionCall("set_speed", {"speed": int(match.group(1))})


def build_pipeline(
    scene: WorldScene,
    initial_speed_mph: float,
    backend_config: BackendConfig,
    *,
    clock: Clock | None = None,
    variability: bool = False,
    seed: int = 0,
    documents: tuple[str, ...] = (),
    sim_config: SimConfig | None = None,
    max_history_turns: int = 20,
) -> tuple[AgentPipeline, VehicleSimulator]:
    """Wire a simulator, backend, and command registry into a ready pipeline."""
    clock = clock or MonotonicClock()
    simulator = VehicleSimulator(scene, initial_speed_mph, sim_config)
    backend = ModelBackend(backend_config, clock=clock)
    registry = built_in_registry()

    def _set_speed(speed: int) -> str:
        simulator.set_speed(speed)
        return f"Speed has been set to {speed} MPH."

    registry.bind_target("vehicle.set_speed", _set_speed)
    pipeline = AgentPipeline(
        simulator,
        backend,
        registry,
        clock=clock,
        documents=documents,
        variability=variability,
        seed=seed,
        max_history_turns=max_history_turns,
    )
    return pipeline, simulator
