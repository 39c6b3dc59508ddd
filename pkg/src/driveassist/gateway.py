"""Network front door: WebSocket session protocol, telemetry, health, static UI.

Wire protocol (JSON text frames on /session):

  client -> server   {"type": "query", "text": ..., "client_turn_id": ...}
  server -> client   {"type": "status", "state": "ready"}
                     {"type": "telemetry", ...vehicle snapshot fields}
                     {"type": "response", "text", "service_type", "latency_ms",
                      "client_turn_id", "executed_commands"}
                     {"type": "error", "code", "message", "client_turn_id"?}

Every accepted query gets exactly one response (or one error) echoing its
client_turn_id. Telemetry is a latest-value broadcast: slow consumers skip
frames, they never delay responses.
"""

from __future__ import annotations

import asyncio
import json
import socket
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from driveassist.backend import TransportError
from driveassist.domain import DriverQuery
from driveassist.metrics import InvocationRecord, build_report, export
from driveassist.pipeline import AgentPipeline, Session, TurnInFlight
from driveassist.simulator import VehicleSimulator


class BindError(Exception):
    """The configured port is not available."""


@dataclass
class GatewayConfig:
    port: int = 8777
    host: str = "127.0.0.1"
    telemetry_hz: float = 5.0
    max_sessions: int = 4
    static_dir: Path | None = None
    metrics_out: Path | None = None


class TelemetryHub:
    """Latest-value broadcast: consumers always read the newest snapshot."""

    def __init__(self) -> None:
        self._cond = asyncio.Condition()
        self._seq = 0
        self._payload: dict | None = None

    async def publish(self, payload: dict) -> None:
        async with self._cond:
            self._seq += 1
            self._payload = payload
            self._cond.notify_all()

    async def next_after(self, seen_seq: int) -> tuple[int, dict]:
        async with self._cond:
            await self._cond.wait_for(lambda: self._seq > seen_seq)
            assert self._payload is not None
            return self._seq, self._payload


class GatewayRuntime:
    """Shared serve-mode state: vehicle loop, telemetry hub, session registry."""

    def __init__(self, pipeline: AgentPipeline, simulator: VehicleSimulator,
                 config: GatewayConfig) -> None:
        self.pipeline = pipeline
        self.simulator = simulator
        self.config = config
        self.hub = TelemetryHub()
        self.active_connections = 0
        self.sessions: list[Session] = []
        self._tasks: list[asyncio.Task] = []

    def start_background(self) -> None:
        self._tasks = [
            asyncio.get_running_loop().create_task(self._tick_loop()),
            asyncio.get_running_loop().create_task(self._publish_loop()),
        ]

    async def stop_background(self) -> None:
        for task in self._tasks:
            task.cancel()
        for task in self._tasks:
            try:
                await task
            except asyncio.CancelledError:
                pass
        self._tasks = []
        self.flush_metrics()

    async def _tick_loop(self) -> None:
        dt = self.simulator.config.tick_dt_s
        while True:
            self.simulator.tick_once()
            await asyncio.sleep(dt)

    async def _publish_loop(self) -> None:
        period = 1.0 / self.config.telemetry_hz
        while True:
            await self.hub.publish(self.simulator.telemetry().as_payload())
            await asyncio.sleep(period)

    def all_records(self) -> tuple[InvocationRecord, ...]:
        records: list[InvocationRecord] = []
        for session in self.sessions:
            records.extend(session.metrics.records())
        return tuple(records)

    def flush_metrics(self) -> None:
        if self.config.metrics_out is None:
            return
        self.config.metrics_out.write_bytes(export(build_report(self.all_records()), "csv"))


def _error_payload(code: str, message: str, client_turn_id: str | None = None) -> dict:
    payload = {"type": "error", "code": code, "message": message}
    if client_turn_id is not None:
        payload["client_turn_id"] = client_turn_id
    return payload


def create_app(runtime: GatewayRuntime) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_: FastAPI):
        runtime.start_background()
        try:
            yield
        finally:
            await runtime.stop_background()

    app = FastAPI(lifespan=lifespan)
    app.state.runtime = runtime

    @app.get("/healthz")
    async def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.websocket("/session")
    async def session_ws(ws: WebSocket) -> None:
        await ws.accept()
        if runtime.active_connections >= runtime.config.max_sessions:
            await ws.send_text(json.dumps(_error_payload("busy", "session limit reached")))
            await ws.close()
            return
        runtime.active_connections += 1
        session = runtime.pipeline.new_session(uuid.uuid4().hex)
        runtime.sessions.append(session)
        send_lock = asyncio.Lock()
        turn_tasks: set[asyncio.Task] = set()
        in_flight = {"busy": False}

        async def send(payload: dict) -> None:
            async with send_lock:
                await ws.send_text(json.dumps(payload))

        async def telemetry_sender() -> None:
            seen = 0
            try:
                while True:
                    seen, payload = await runtime.hub.next_after(seen)
                    await send({"type": "telemetry", **payload})
            except (WebSocketDisconnect, RuntimeError):
                return

        async def run_turn(text: str, client_turn_id: str) -> None:
            loop = asyncio.get_running_loop()
            try:
                query = DriverQuery(text, runtime.pipeline.clock.now_ms(), session.session_id)
                result = await loop.run_in_executor(
                    None, runtime.pipeline.handle_turn, session, query
                )
                await send(
                    {
                        "type": "response",
                        "text": result.response.text,
                        "service_type": result.service_type.value,
                        "latency_ms": result.record.total_ms,
                        "client_turn_id": client_turn_id,
                        "executed_commands": [
                            {"name": c.name, "arguments": dict(c.arguments)}
                            for c in result.executed_commands.calls
                        ],
                    }
                )
            except TransportError as exc:
                await send(_error_payload("backend", str(exc), client_turn_id))
            except (WebSocketDisconnect, RuntimeError):
                pass
            except Exception as exc:
                await send(_error_payload("internal", str(exc), client_turn_id))
            finally:
                in_flight["busy"] = False

        await send({"type": "status", "state": "ready"})
        telemetry_task = asyncio.get_running_loop().create_task(telemetry_sender())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await send(_error_payload("protocol", "message is not valid JSON"))
                    continue
                turn_id = msg.get("client_turn_id") if isinstance(msg, dict) else None
                if (
                    not isinstance(msg, dict)
                    or msg.get("type") != "query"
                    or not isinstance(msg.get("text"), str)
                    or not msg["text"].strip()
                    or not isinstance(turn_id, str)
                ):
                    await send(_error_payload("protocol", "expected a query with text and client_turn_id", turn_id if isinstance(turn_id, str) else None))
                    continue
                if in_flight["busy"]:
                    await send(_error_payload("turn_in_flight", "a turn is already being handled", turn_id))
                    continue
                in_flight["busy"] = True
                task = asyncio.get_running_loop().create_task(run_turn(msg["text"], turn_id))
                turn_tasks.add(task)
                task.add_done_callback(turn_tasks.discard)
        except WebSocketDisconnect:
            pass
        finally:
            telemetry_task.cancel()
            for task in turn_tasks:
                task.cancel()
            runtime.active_connections -= 1

    static_dir = runtime.config.static_dir
    if static_dir is not None and static_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="cockpit")
    else:
        @app.get("/")
        async def index() -> HTMLResponse:
            return HTMLResponse(
                "<html><body><h1>driveassist gateway</h1>"
                "<p>No cockpit build found. WebSocket endpoint: /session, health: /healthz.</p>"
                "</body></html>"
            )

    return app


def _check_port_free(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            probe.bind((host, port))
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc


def serve(runtime: GatewayRuntime) -> None:
    """Run the gateway until interrupted; metrics flush on shutdown."""
    import uvicorn

    _check_port_free(runtime.config.host, runtime.config.port)
    app = create_app(runtime)
    uvicorn.run(app, host=runtime.config.host, port=runtime.config.port, log_level="warning")
