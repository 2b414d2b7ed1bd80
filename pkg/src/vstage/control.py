"""WebSocket control surface for a running session engine.

One full-duplex connection carries both directions: clients send JSON
requests ({"id", "type", "params"}) and get exactly one reply each
({"id", "type": "reply", "ok", result-or-error}); the server pushes
events on top (engine log entries with their sequence numbers, meter
frames at 10 Hz, a heartbeat every 2 s). All outbound traffic for a
connection flows through a single queue, so replies and events never
interleave mid-message, and engine events reach every client in log
order.

Protocol schema version 1; see docs/control-protocol.md.
"""

from __future__ import annotations

import asyncio
import json
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .engine import Engine

PROTOCOL_VERSION = 1
METER_INTERVAL_SECONDS = 0.1
HEARTBEAT_INTERVAL_SECONDS = 2.0


class _RequestError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _reply(req_id, result) -> dict:
    return {"id": req_id, "type": "reply", "ok": True, "result": result}


def _error(req_id, code: str, message: str) -> dict:
    return {"id": req_id, "type": "reply", "ok": False,
            "error": {"code": code, "message": message}}


def _event(name: str, data, seq=None) -> dict:
    envelope = {"type": "event", "event": name, "data": data}
    if seq is not None:
        envelope["seq"] = seq
    return envelope


def create_app(engine: Engine, *,
               meter_interval: float = METER_INTERVAL_SECONDS,
               heartbeat_interval: float = HEARTBEAT_INTERVAL_SECONDS,
               latency_device=None, static_dir=None) -> FastAPI:
    """Build the control application around one engine instance.

    ``latency_device`` provides the loopback for run_latency_check
    requests; without one the request gets an 'unsupported' error.
    ``static_dir`` mounts the built control panel at the root path.
    """
    clients: set[asyncio.Queue] = set()
    cursor = {"seq": -1}

    def drain_engine_events() -> None:
        # engine.events only ever grows, and seq is strictly increasing,
        # so a cursor is enough to broadcast each entry exactly once
        events = engine.events
        while cursor["seq"] < (events[-1]["seq"] if events else -1):
            for entry in events:
                if entry["seq"] > cursor["seq"]:
                    cursor["seq"] = entry["seq"]
                    for queue in clients:
                        queue.put_nowait(
                            _event(entry["event"], entry, seq=entry["seq"]))
                    break

    def broadcast(message: dict) -> None:
        for queue in clients:
            queue.put_nowait(message)

    async def ticker() -> None:
        since_heartbeat = 0.0
        while True:
            await asyncio.sleep(meter_interval)
            drain_engine_events()
            broadcast(_event("meters", engine.get_meters()))
            since_heartbeat += meter_interval
            if since_heartbeat >= heartbeat_interval:
                since_heartbeat = 0.0
                broadcast(_event("heartbeat", {"time": time.monotonic()}))

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        task = asyncio.create_task(ticker())
        try:
            yield
        finally:
            task.cancel()

    app = FastAPI(lifespan=lifespan)

    def handle(request_type: str, params: dict):
        if request_type == "get_state":
            return engine.get_state()
        if request_type == "get_meters":
            return engine.get_meters()
        if request_type == "switch_scenario":
            scenario_id = params.get("id")
            if not isinstance(scenario_id, str):
                raise _RequestError("bad_params",
                                    "switch_scenario needs a string 'id'")
            try:
                engine.switch_scenario(scenario_id)
            except ValueError as err:
                raise _RequestError("invalid", str(err)) from err
            state = engine.get_state()
            return {key: state[key] for key in
                    ("active_scenario", "pending_scenario", "fading")}
        if request_type == "set_talkback":
            enabled = params.get("enabled")
            if not isinstance(enabled, bool):
                raise _RequestError("bad_params",
                                    "set_talkback needs a boolean 'enabled'")
            engine.set_talkback(enabled)
            return {"talkback": enabled}
        if request_type == "start":
            engine.start()
            return {"transport": "running"}
        if request_type == "stop":
            engine.stop()
            return {"transport": "idle"}
        if request_type == "log_marker":
            text = params.get("text")
            if not isinstance(text, str):
                raise _RequestError("bad_params",
                                    "log_marker needs a string 'text'")
            engine.log_marker(text)
            return {}
        if request_type == "run_latency_check":
            if latency_device is None:
                raise _RequestError(
                    "unsupported",
                    "no loopback device is attached to this server")
            try:
                return engine.run_latency_check(latency_device).as_dict()
            except Exception as err:
                raise _RequestError("invalid", str(err)) from err
        raise _RequestError("unknown_type",
                            f"unknown request type {request_type!r}")

    def handle_raw(raw: str) -> dict:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as err:
            return _error(None, "bad_json", f"message is not JSON: {err}")
        if not isinstance(doc, dict):
            return _error(None, "bad_request", "message must be an object")
        req_id = doc.get("id")
        request_type = doc.get("type")
        if not isinstance(request_type, str):
            return _error(req_id, "bad_request",
                          "message needs a string 'type'")
        params = doc.get("params", {})
        if not isinstance(params, dict):
            return _error(req_id, "bad_params", "'params' must be an object")
        try:
            return _reply(req_id, handle(request_type, params))
        except _RequestError as err:
            return _error(req_id, err.code, err.message)

    async def pump(ws: WebSocket, queue: asyncio.Queue) -> None:
        while True:
            await ws.send_json(await queue.get())

    @app.websocket("/ws")
    async def websocket_endpoint(ws: WebSocket):
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue()
        queue.put_nowait(_event("hello", {
            "schema_version": PROTOCOL_VERSION,
            "state": engine.get_state(),
        }))
        clients.add(queue)
        sender = asyncio.create_task(pump(ws, queue))
        try:
            while True:
                raw = await ws.receive_text()
                queue.put_nowait(handle_raw(raw))
                drain_engine_events()
        except WebSocketDisconnect:
            pass
        finally:
            clients.discard(queue)
            sender.cancel()

    if static_dir is not None:
        from starlette.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="panel")

    return app


def serve(engine: Engine, *, host: str = "127.0.0.1", port: int = 8765,
          static_dir=None, latency_device=None,
          log_level: str = "info") -> None:
    """Run the control endpoint until interrupted. Local binding only
    unless the operator asks otherwise."""
    import uvicorn

    app = create_app(engine, static_dir=static_dir,
                     latency_device=latency_device)
    uvicorn.run(app, host=host, port=port, log_level=log_level)
