"""Reasoning-model abstraction: prompt in, completion plus token usage out.

Two backends share one interface: a deterministic rule oracle that makes the
whole pipeline testable offline, and a remote completion client that POSTs
the request to a configured HTTP endpoint. Prompts are plain text organized
into "## section" blocks so the oracle can parse back exactly what the
pipeline assembled.

Token counting is intentionally simple (whitespace runs, with punctuation
characters as standalone tokens): the metrics only need a consistent count,
and remote backends report their own usage.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import requests

from driveassist.clock import Clock, MonotonicClock
from driveassist.domain import AssistantResponse, DrivingContext, QueryMetadata, RefinedQuery
from driveassist.functioncall import FunctionCall, parse_call, serialize_call
from driveassist.perception import recover_tags
from driveassist.simulator import RoadType, Traffic, Weather

STANDARD_OUTPUT_CAP = 300
VISION_OUTPUT_CAP = 500

MODULE_NAMES = ("refiner", "vision", "actuator", "responder")


class TransportError(Exception):
    """The remote endpoint could not be reached or refused the request."""


class MalformedResponse(Exception):
    """The remote endpoint returned an unusable payload."""


class MissingContext(Exception):
    """A sensing query reached the responder without scene context."""


class NoPendingAction(Exception):
    """A confirmation arrived with nothing pending to confirm."""


class Role(Enum):
    REFINER = "refiner"
    RESPONDER = "responder"
    COMMANDER = "commander"


# Latency-injection keys are pipeline module names; the commander role is
# the actuator module, and the vision delay is honored by the pipeline's
# context-retrieval step (scene perception is local, not a backend call).
MODULE_FOR_ROLE = {Role.REFINER: "refiner", Role.RESPONDER: "responder", Role.COMMANDER: "actuator"}


class BackendKind(Enum):
    RULE_ORACLE = "rule_oracle"
    REMOTE = "remote"


@dataclass(frozen=True, slots=True)
class TokenUsage:
    uplink: int
    downlink: int

    def __post_init__(self) -> None:
        if self.uplink < 0 or self.downlink < 0:
            raise ValueError("token counts must be >= 0")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.uplink + other.uplink, self.downlink + other.downlink)


@dataclass(frozen=True, slots=True)
class ModelRequest:
    role: Role
    prompt: str
    max_output_tokens: int = STANDARD_OUTPUT_CAP

    def __post_init__(self) -> None:
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")


@dataclass(frozen=True, slots=True)
class ModelResponse:
    text: str
    usage: TokenUsage


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.RULE_ORACLE
    endpoint_url: str | None = None
    api_key_env: str | None = None
    injected_delay_ms: Mapping[str, int] = field(default_factory=dict)
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE and not self.endpoint_url:
            raise ValueError("remote backend requires endpoint_url")
        unknown = set(self.injected_delay_ms) - set(MODULE_NAMES)
        if unknown:
            raise ValueError(f"unknown injected delay keys: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r'[.,:;?!(){}"\[\]]|[^\s.,:;?!(){}"\[\]]+')


def count_tokens(text: str) -> int:
    """Count whitespace-delimited runs, with each punctuation char its own token."""
    return len(_TOKEN_RE.findall(text))


def truncate_to_tokens(text: str, limit: int) -> str:
    """Cut text at the end of the limit-th token; no ellipsis."""
    spans = list(_TOKEN_RE.finditer(text))
    if len(spans) <= limit:
        return text
    return text[: spans[limit - 1].end()]


# ---------------------------------------------------------------------------
# Prompt sections
# ---------------------------------------------------------------------------


def build_prompt(sections: Mapping[str, str]) -> str:
    """Join named sections as "## name" blocks, preserving order."""
    return "\n".join(f"## {name}\n{value}" for name, value in sections.items())


def split_sections(prompt: str) -> dict[str, str]:
    """Inverse of build_prompt; unknown leading text is ignored."""
    sections: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in prompt.split("\n"):
        if line.startswith("## "):
            if current is not None:
                sections[current] = "\n".join(lines)
            current = line[3:].strip()
            lines = []
        elif current is not None:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines)
    return sections


# ---------------------------------------------------------------------------
# Rule oracle
# ---------------------------------------------------------------------------

SPEED_TABLE_MPH = {
    (RoadType.HIGHWAY, Weather.CLEAR): 65,
    (RoadType.HIGHWAY, Weather.RAINY): 40,
    (RoadType.HIGHWAY, Weather.FOGGY): 30,
    (RoadType.DOWNTOWN, Weather.CLEAR): 45,
    (RoadType.DOWNTOWN, Weather.RAINY): 20,
    (RoadType.DOWNTOWN, Weather.FOGGY): 20,
}

# Dense traffic shaves 5 MPH off the table baseline; light traffic uses the
# baseline unchanged.
TRAFFIC_PENALTY_MPH = 5

CANONICAL_SPEED_QUERY = "What speed is safe for this road?"
SMALL_TALK_ACK = "Understood. I am here to help with your drive."

_SENSING_KEYWORDS = ("recommend", "what speed", "safe speed", "see", "ahead", "scene", "road")
_CONFIRM_KEYWORDS = ("yes", "go ahead", "confirm", "apply", "set")

_PROPOSAL_RE = re.compile(r"setting the speed to (\d+) MPH")
_CONFIRM_QUESTION = "apply this setting?"
_MOTION_RE = re.compile(r"current speed ([0-9][0-9.]*) MPH")


def oracle_recommend_speed(road_type: RoadType, weather: Weather) -> int:
    """Baseline recommended speed for a road/weather cell."""
    return SPEED_TABLE_MPH[(road_type, weather)]


def recommended_speed(road_type: RoadType, weather: Weather, traffic: Traffic) -> int:
    """Traffic-adjusted recommendation: moderate-or-heavier lowers the baseline."""
    base = oracle_recommend_speed(road_type, weather)
    if traffic in (Traffic.MODERATE, Traffic.HEAVY):
        return base - TRAFFIC_PENALTY_MPH
    return base


def _has_keyword(text: str, keyword: str) -> bool:
    return re.search(rf"\b{re.escape(keyword)}\b", text) is not None


def _is_speed_query(text: str) -> bool:
    low = text.lower()
    return "speed" in low and any(k in low for k in ("recommend", "safe", "what speed"))


def _last_assistant_proposal(history_rendered: str) -> int | None:
    """Speed proposed by the most recent assistant turn, if it asked for confirmation."""
    last = None
    for line in history_rendered.split("\n"):
        if line.startswith("assistant: "):
            last = line
    if last is None or _CONFIRM_QUESTION not in last:
        return None
    match = _PROPOSAL_RE.search(last)
    return int(match.group(1)) if match else None


def oracle_refine(user_text: str, history_rendered: str) -> tuple[str, QueryMetadata]:
    """Classify intent and normalize the query text.

    A confirmation is only recognized when the latest assistant turn carried
    a proposal awaiting confirmation; keyword matches alone never actuate.
    """
    text = " ".join(user_text.split())
    low = text.lower()
    pending = _last_assistant_proposal(history_rendered)
    if pending is not None and any(_has_keyword(low, k) for k in _CONFIRM_KEYWORDS):
        return f"Yes, set the speed to {pending} MPH", QueryMetadata(False, True)
    if any(_has_keyword(low, k) for k in _SENSING_KEYWORDS):
        refined = CANONICAL_SPEED_QUERY if _is_speed_query(low) else text
        return refined, QueryMetadata(True, False)
    return text, QueryMetadata(False, False)


def _format_mph(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(round(value, 1))


def _respond(query_text: str, vision: str | None, motion_mph: float | None,
             executed_ack: str | None) -> tuple[str, FunctionCall | None]:
    """Responder rules shared by the structured op and the prompt interface."""
    if executed_ack:
        return executed_ack, None
    if vision is not None and _is_speed_query(query_text):
        road, weather, traffic = recover_tags(vision)
        speed = recommended_speed(road, weather, traffic)
        text = (
            f"Based on the detected {vision}, I recommend setting the speed to "
            f"{speed} MPH. Would you like to apply this setting?"
        )
        return text, FunctionCall("set_speed", {"speed": speed})
    if vision is not None:
        parts = [f"I can see {vision}."]
        if motion_mph is not None:
            parts.append(f"Current speed is {_format_mph(motion_mph)} MPH.")
        return " ".join(parts), None
    return SMALL_TALK_ACK, None


def oracle_respond(refined: RefinedQuery, context: DrivingContext | None,
                   history_rendered: str) -> AssistantResponse:
    """Generate the reply for an informational turn.

    Raises MissingContext when the query needs scene context and none was
    retrieved.
    """
    vision = context.vision if context else None
    motion = context.motion.speed_mph if context and context.motion else None
    if refined.metadata.sensing_required and vision is None:
        raise MissingContext("sensing query requires scene context")
    text, proposed = _respond(refined.text, vision, motion, None)
    return AssistantResponse(text=text, proposed_action=proposed)


def oracle_command(refined: RefinedQuery, pending: FunctionCall | None) -> str:
    """Emit the canonical command text for a confirmed pending action."""
    if pending is None:
        raise NoPendingAction("nothing to confirm")
    return serialize_call(pending)


# ---------------------------------------------------------------------------
# Backend interface
# ---------------------------------------------------------------------------


class ModelBackend:
    """Blocking completion interface over the configured backend kind."""

    def __init__(self, config: BackendConfig | None = None, clock: Clock | None = None) -> None:
        self.config = config or BackendConfig()
        self.clock = clock or MonotonicClock()

    def complete(self, request: ModelRequest) -> ModelResponse:
        delay = self.config.injected_delay_ms.get(MODULE_FOR_ROLE[request.role], 0)
        if delay:
            self.clock.sleep_ms(delay)
        if self.config.kind is BackendKind.RULE_ORACLE:
            return self._complete_oracle(request)
        return self._complete_remote(request)

    def _complete_oracle(self, request: ModelRequest) -> ModelResponse:
        sections = split_sections(request.prompt)
        if request.role is Role.REFINER:
            refined, metadata = oracle_refine(sections.get("query", ""), sections.get("history", ""))
            text = json.dumps(
                {
                    "refined_text": refined,
                    "sensing_required": metadata.sensing_required,
                    "actuation_required": metadata.actuation_required,
                }
            )
        elif request.role is Role.COMMANDER:
            pending_raw = sections.get("pending", "").strip()
            if not pending_raw:
                raise NoPendingAction("commander prompt carries no pending action")
            text = serialize_call(parse_call(pending_raw))
        else:
            vision: str | None = None
            motion: float | None = None
            for line in sections.get("context", "").split("\n"):
                if line.startswith("vision: "):
                    vision = line[len("vision: "):]
                elif line.startswith("motion: "):
                    match = _MOTION_RE.search(line)
                    motion = float(match.group(1)) if match else None
            executed = sections.get("executed", "").strip() or None
            text, _ = _respond(sections.get("query", ""), vision, motion, executed)
        text = truncate_to_tokens(text, request.max_output_tokens)
        usage = TokenUsage(uplink=count_tokens(request.prompt), downlink=count_tokens(text))
        return ModelResponse(text=text, usage=usage)

    def _complete_remote(self, request: ModelRequest) -> ModelResponse:
        headers = {}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.config.endpoint_url,
                json={
                    "role": request.role.value,
                    "prompt": request.prompt,
                    "max_output_tokens": request.max_output_tokens,
                },
                headers=headers,
                timeout=self.config.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned status {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedResponse("endpoint returned non-JSON body") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise MalformedResponse("endpoint payload missing text")
        try:
            usage = TokenUsage(int(payload["uplink"]), int(payload["downlink"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse("endpoint payload missing usable token counts") from exc
        return ModelResponse(text=payload["text"], usage=usage)
