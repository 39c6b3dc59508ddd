"""Tokenizer, rule-oracle reasoning, completion interface, remote client."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings, strategies as st

from driveassist.backend import (
    BackendConfig,
    BackendKind,
    MalformedResponse,
    MissingContext,
    ModelBackend,
    ModelRequest,
    NoPendingAction,
    Role,
    TokenUsage,
    TransportError,
    build_prompt,
    count_tokens,
    oracle_command,
    oracle_recommend_speed,
    oracle_refine,
    oracle_respond,
    recommended_speed,
    split_sections,
    truncate_to_tokens,
)
from driveassist.clock import MonotonicClock, VirtualClock
from driveassist.domain import DriverQuery, DrivingContext, MotionState, QueryMetadata, RefinedQuery
from driveassist.functioncall import FunctionCall
from driveassist.simulator import RoadType, Traffic, Weather

ORACLE = ModelBackend(BackendConfig())


def _refined(text: str, sensing: bool = False, actuation: bool = False) -> RefinedQuery:
    query = DriverQuery(text, 0.0, "s")
    return RefinedQuery(text, QueryMetadata(sensing, actuation), query)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


def test_count_tokens_empty():
    assert count_tokens("") == 0


def test_count_tokens_punctuation_splits():
    # Hand-tokenized: set | speed | to | 40 | .
    assert count_tokens("set speed to 40.") == 5


def test_count_tokens_brackets_and_quotes():
    assert count_tokens('{"speed": 40}') == 7  # { | " | speed | " | : | 40 | }


@given(a=st.text(max_size=80), b=st.text(max_size=80))
def test_count_tokens_space_concatenation_additive(a: str, b: str):
    assert count_tokens(a + " " + b) == count_tokens(a) + count_tokens(b)


@given(text=st.text(max_size=400), limit=st.integers(min_value=1, max_value=50))
def test_truncation_respects_cap(text: str, limit: int):
    truncated = truncate_to_tokens(text, limit)
    assert count_tokens(truncated) <= limit
    assert text.startswith(truncated)


def test_sections_round_trip():
    sections = {"history": "driver: hi\nassistant: hello", "query": "what now?"}
    assert split_sections(build_prompt(sections)) == sections


# ---------------------------------------------------------------------------
# Rule oracle
# ---------------------------------------------------------------------------


def test_speed_table_matches_published_cells():
    assert oracle_recommend_speed(RoadType.HIGHWAY, Weather.CLEAR) == 65
    assert oracle_recommend_speed(RoadType.HIGHWAY, Weather.RAINY) == 40
    assert oracle_recommend_speed(RoadType.HIGHWAY, Weather.FOGGY) == 30
    assert oracle_recommend_speed(RoadType.DOWNTOWN, Weather.CLEAR) == 45
    assert oracle_recommend_speed(RoadType.DOWNTOWN, Weather.RAINY) == 20
    assert oracle_recommend_speed(RoadType.DOWNTOWN, Weather.FOGGY) == 20


def test_traffic_adjustment_lowers_dense_traffic():
    assert recommended_speed(RoadType.DOWNTOWN, Weather.CLEAR, Traffic.MODERATE) == 40
    assert recommended_speed(RoadType.DOWNTOWN, Weather.CLEAR, Traffic.LIGHT) == 45
    assert recommended_speed(RoadType.HIGHWAY, Weather.CLEAR, Traffic.HEAVY) == 60


def test_refine_speed_query():
    refined, metadata = oracle_refine("Could you recommend a safe speed for this road?", "")
    assert refined == "What speed is safe for this road?"
    assert metadata == QueryMetadata(True, False)


def test_refine_confirmation_with_pending_proposal():
    history = (
        "driver: Could you recommend a safe speed for this road?\n"
        "assistant: Based on the detected urban road, moderate traffic, I recommend "
        "setting the speed to 40 MPH. Would you like to apply this setting?"
    )
    refined, metadata = oracle_refine("Yes, go ahead.", history)
    assert refined == "Yes, set the speed to 40 MPH"
    assert metadata == QueryMetadata(False, True)


def test_refine_small_talk():
    refined, metadata = oracle_refine("Hello", "")
    assert refined == "Hello"
    assert metadata == QueryMetadata(False, False)


def test_refine_confirmation_requires_pending():
    refined, metadata = oracle_refine("Yes, go ahead.", "driver: hi\nassistant: hello")
    # "ahead" is a sensing keyword; without a proposal this cannot actuate.
    assert metadata.actuation_required is False


def test_refine_ignores_stale_proposal():
    history = (
        "driver: speed?\n"
        "assistant: I recommend setting the speed to 40 MPH. Would you like to apply this setting?\n"
        "driver: Hello\n"
        "assistant: Understood. I am here to help with your drive."
    )
    _, metadata = oracle_refine("Yes", history)
    assert metadata.actuation_required is False


def test_respond_recommends_forty_downtown_moderate():
    context = DrivingContext(
        vision="urban road, moderate traffic", motion=MotionState(42.0)
    )
    response = oracle_respond(_refined("What speed is safe for this road?", sensing=True), context, "")
    assert "recommend setting the speed to 40 MPH" in response.text
    assert "Would you like to apply this setting?" in response.text
    assert response.proposed_action == FunctionCall("set_speed", {"speed": 40})


def test_respond_recommends_sixty_five_highway_clear():
    context = DrivingContext(vision="highway road, clear visibility, light traffic")
    response = oracle_respond(_refined("What speed is safe for this road?", sensing=True), context, "")
    assert "setting the speed to 65 MPH" in response.text


def test_respond_requires_context_for_sensing():
    with pytest.raises(MissingContext):
        oracle_respond(_refined("What speed is safe for this road?", sensing=True), None, "")


def test_respond_scene_report_for_non_speed_sensing():
    context = DrivingContext(vision="urban road, light traffic", motion=MotionState(42.0))
    response = oracle_respond(_refined("What do you see ahead?", sensing=True), context, "")
    assert "urban road, light traffic" in response.text
    assert response.proposed_action is None


def test_command_serializes_pending():
    refined = _refined("Yes, set the speed to 40 MPH", actuation=True)
    assert (
        oracle_command(refined, FunctionCall("set_speed", {"speed": 40}))
        == '{"name": "set_speed", "arguments": {"speed": 40}}'
    )
    assert (
        oracle_command(refined, FunctionCall("set_speed", {"speed": 50}))
        == '{"name": "set_speed", "arguments": {"speed": 50}}'
    )


def test_command_without_pending():
    with pytest.raises(NoPendingAction):
        oracle_command(_refined("Yes", actuation=True), None)


# ---------------------------------------------------------------------------
# complete()
# ---------------------------------------------------------------------------


def test_complete_refiner_emits_flags():
    prompt = build_prompt({"history": "", "query": "Could you recommend a safe speed for this road?"})
    response = ORACLE.complete(ModelRequest(Role.REFINER, prompt))
    payload = json.loads(response.text)
    assert payload["sensing_required"] is True
    assert payload["actuation_required"] is False


def test_complete_is_deterministic():
    request = ModelRequest(Role.RESPONDER, build_prompt({"history": "", "query": "Hello"}))
    first = ORACLE.complete(request)
    second = ORACLE.complete(request)
    assert first.text == second.text
    assert first.usage == second.usage


def test_complete_uplink_counts_prompt_tokens():
    prompt = build_prompt({"history": "driver: hi", "query": "Hello"})
    response = ORACLE.complete(ModelRequest(Role.REFINER, prompt))
    assert response.usage.uplink == count_tokens(prompt)
    assert response.usage.downlink == count_tokens(response.text)


def test_complete_injected_delay_blocks():
    backend = ModelBackend(
        BackendConfig(injected_delay_ms={"responder": 100}), clock=MonotonicClock()
    )
    request = ModelRequest(Role.RESPONDER, build_prompt({"query": "Hello"}))
    start = time.monotonic()
    backend.complete(request)
    assert time.monotonic() - start >= 0.1


def test_complete_injected_delay_virtual_clock():
    clock = VirtualClock()
    backend = ModelBackend(BackendConfig(injected_delay_ms={"refiner": 50}), clock=clock)
    backend.complete(ModelRequest(Role.REFINER, build_prompt({"history": "", "query": "Hello"})))
    assert clock.now_ms() == 50


@settings(max_examples=30, deadline=None)
@given(filler=st.text(alphabet="ab ", min_size=0, max_size=2000), cap=st.integers(min_value=1, max_value=40))
def test_complete_downlink_capped(filler: str, cap: int):
    prompt = build_prompt({"history": "", "query": "hello " + filler})
    response = ORACLE.complete(ModelRequest(Role.REFINER, prompt, max_output_tokens=cap))
    assert response.usage.downlink <= cap


def test_commander_without_pending_section():
    with pytest.raises(NoPendingAction):
        ORACLE.complete(ModelRequest(Role.COMMANDER, build_prompt({"confirmation": "Yes"})))


def test_backend_config_validates_remote():
    with pytest.raises(ValueError):
        BackendConfig(kind=BackendKind.REMOTE)


def test_backend_config_rejects_unknown_delay_keys():
    with pytest.raises(ValueError):
        BackendConfig(injected_delay_ms={"parser": 5})


# ---------------------------------------------------------------------------
# Remote client
# ---------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    status = 200
    payload: dict = {"text": "remote says hi", "uplink": 12, "downlink": 4}
    raw_body: bytes | None = None
    last_request: dict | None = None
    last_auth: str | None = None

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        type(self).last_request = json.loads(self.rfile.read(length))
        type(self).last_auth = self.headers.get("Authorization")
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        body = self.raw_body if self.raw_body is not None else json.dumps(self.payload).encode()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_endpoint():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.status = 200
    _StubHandler.raw_body = None
    _StubHandler.payload = {"text": "remote says hi", "uplink": 12, "downlink": 4}
    yield f"http://127.0.0.1:{server.server_port}/complete"
    server.shutdown()


def test_remote_round_trip(stub_endpoint, monkeypatch):
    monkeypatch.setenv("STUB_KEY", "sekrit")
    backend = ModelBackend(
        BackendConfig(kind=BackendKind.REMOTE, endpoint_url=stub_endpoint, api_key_env="STUB_KEY")
    )
    response = backend.complete(ModelRequest(Role.RESPONDER, "ping", 300))
    assert response.text == "remote says hi"
    assert response.usage == TokenUsage(12, 4)
    assert _StubHandler.last_request == {"role": "responder", "prompt": "ping", "max_output_tokens": 300}
    assert _StubHandler.last_auth == "Bearer sekrit"


def test_remote_unreachable_raises_transport_error():
    backend = ModelBackend(
        BackendConfig(kind=BackendKind.REMOTE, endpoint_url="http://127.0.0.1:1/nope", timeout_s=0.5)
    )
    with pytest.raises(TransportError):
        backend.complete(ModelRequest(Role.RESPONDER, "ping"))


def test_remote_error_status_raises_transport_error(stub_endpoint):
    _StubHandler.status = 503
    backend = ModelBackend(BackendConfig(kind=BackendKind.REMOTE, endpoint_url=stub_endpoint))
    with pytest.raises(TransportError):
        backend.complete(ModelRequest(Role.RESPONDER, "ping"))


def test_remote_malformed_payload(stub_endpoint):
    _StubHandler.payload = {"message": "wrong shape"}
    backend = ModelBackend(BackendConfig(kind=BackendKind.REMOTE, endpoint_url=stub_endpoint))
    with pytest.raises(MalformedResponse):
        backend.complete(ModelRequest(Role.RESPONDER, "ping"))


def test_remote_non_json_body(stub_endpoint):
    _StubHandler.raw_body = b"<html>oops</html>"
    backend = ModelBackend(BackendConfig(kind=BackendKind.REMOTE, endpoint_url=stub_endpoint))
    with pytest.raises(MalformedResponse):
        backend.complete(ModelRequest(Role.RESPONDER, "ping"))
