"""Shared conversational vocabulary: queries, metadata, dialogue history, responses.

All types here are immutable values; dialogue histories are updated by
replacement, which keeps them safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from driveassist.functioncall import FunctionCall


class ServiceType(Enum):
    """Post-hoc classification of a completed conversational turn."""

    CONVERSATIONAL_ONLY = "ConversationalOnly"
    CONVERSATIONAL_ADAS = "ConversationalAdas"
    SCENE_AWARE = "SceneAware"


class Role(Enum):
    DRIVER = "driver"
    ASSISTANT = "assistant"


class IndexGap(Exception):
    """Appended turn index is not the immediate successor of the last one."""


@dataclass(frozen=True, slots=True)
class DriverQuery:
    """Raw natural-language input from the driver."""

    text: str
    timestamp_ms: float
    session_id: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True, slots=True)
class QueryMetadata:
    """Routing flags attached to a refined query. Both flags are always set."""

    sensing_required: bool
    actuation_required: bool


@dataclass(frozen=True, slots=True)
class RefinedQuery:
    """Normalized query text plus routing metadata."""

    text: str
    metadata: QueryMetadata
    source: DriverQuery

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("refined text must be non-empty")


@dataclass(frozen=True, slots=True)
class MotionState:
    speed_mph: float

    def __post_init__(self) -> None:
        if self.speed_mph < 0:
            raise ValueError("speed_mph must be >= 0")


@dataclass(frozen=True, slots=True)
class DrivingContext:
    """Live context gathered for a sensing turn plus any static documents."""

    vision: str | None = None
    motion: MotionState | None = None
    documents: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class DialogueTurn:
    """One utterance. Assistant turns may carry the turn's service type."""

    role: Role
    text: str
    service_type: ServiceType | None
    turn_index: int

    def __post_init__(self) -> None:
        if self.turn_index < 0:
            raise ValueError("turn_index must be >= 0")
        if self.role is Role.DRIVER and self.service_type is not None:
            raise ValueError("driver turns carry no service type")


@dataclass(frozen=True, slots=True)
class DialogueHistory:
    """Bounded, ordered dialogue transcript with alternating roles."""

    turns: tuple[DialogueTurn, ...] = ()
    max_turns: int = 20

    def __post_init__(self) -> None:
        if self.max_turns < 2:
            raise ValueError("max_turns must be >= 2")
        if len(self.turns) > self.max_turns:
            raise ValueError("history exceeds max_turns")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if cur.turn_index <= prev.turn_index:
                raise ValueError("turn_index must strictly increase")
            if cur.role is prev.role:
                raise ValueError("roles must alternate")

    def __len__(self) -> int:
        return len(self.turns)


def append_turn(history: DialogueHistory, turn: DialogueTurn) -> DialogueHistory:
    """Append a turn, evicting the oldest driver+assistant pair when over capacity.

    Pairwise eviction preserves role alternation. Raises IndexGap when the
    new turn's index is not sequential.
    """
    expected = history.turns[-1].turn_index + 1 if history.turns else 0
    if turn.turn_index != expected:
        raise IndexGap(f"expected turn_index {expected}, got {turn.turn_index}")
    turns = history.turns + (turn,)
    while len(turns) > history.max_turns:
        turns = turns[2:]
    return DialogueHistory(turns=turns, max_turns=history.max_turns)


def classify_service_type(metadata: QueryMetadata) -> ServiceType:
    """Map routing flags to a service type; actuation takes precedence."""
    if metadata.actuation_required:
        return ServiceType.CONVERSATIONAL_ADAS
    if metadata.sensing_required:
        return ServiceType.SCENE_AWARE
    return ServiceType.CONVERSATIONAL_ONLY


def render_history(history: DialogueHistory) -> str:
    """Deterministic "role: text" serialization, one line per turn."""
    return "\n".join(f"{turn.role.value}: {turn.text}" for turn in history.turns)


@dataclass(frozen=True, slots=True)
class AssistantResponse:
    """Natural-language reply, optionally proposing an action to confirm."""

    text: str
    proposed_action: FunctionCall | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("response text must be non-empty")


@dataclass(frozen=True, slots=True)
class AdasCommandSet:
    """Commands executed during a turn (empty for non-actuation turns)."""

    calls: tuple[FunctionCall, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.calls)
