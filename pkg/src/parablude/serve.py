"""Match service: TCP for microphone units, HTTP/WebSocket for consoles.

All mutations funnel through one ordered queue consumed by a single
task, so concurrent connections cannot interleave half-applied events.
Every applied event broadcasts a full state snapshot to subscribers;
slow subscribers skip straight to the latest snapshot.  Under queue
pressure the oldest pending non-hit message is shed first; hit events
are never dropped (the match log must account for every swing).

Transport endpoints:

  TCP  (default port 7401)  newline-delimited JSON, one message per line
  HTTP (default port 7402)  GET /state (snapshot JSON), /ws (WebSocket
                            carrying the same messages), static assets

Clients authenticate with their first message, a command:

  {"type": "command", "seq": 1, "payload": {"command": "auth", "token": t}}

Unauthenticated traffic gets an error and the connection closes.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import socket
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from parablude.game import Match, MatchConfig, MatchError, apply_event
from parablude.protocol import ProtocolError, SeqTracker, WireMessage, decode, encode

GAME_COMMANDS = ("join", "bind", "start", "pause", "resume", "finish", "reset")


def now_ms() -> float:
    return time.time() * 1000.0


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    tcp_port: int = 7401
    http_port: int = 7402
    token: str = "parablude"
    match: MatchConfig = field(default_factory=MatchConfig)
    queue_limit: int = 256
    log_path: str | None = None
    static_dir: str | None = None

    def __post_init__(self):
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")

    def to_dict(self) -> dict:
        return {
            "host": self.host,
            "tcp_port": self.tcp_port,
            "http_port": self.http_port,
            "token": self.token,
            "match": self.match.to_dict(),
            "queue_limit": self.queue_limit,
            "log_path": self.log_path,
            "static_dir": self.static_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ServiceConfig":
        return cls(
            host=doc.get("host", "127.0.0.1"),
            tcp_port=int(doc.get("tcp_port", 7401)),
            http_port=int(doc.get("http_port", 7402)),
            token=doc.get("token", "parablude"),
            match=MatchConfig.from_dict(doc["match"]) if "match" in doc else MatchConfig(),
            queue_limit=int(doc.get("queue_limit", 256)),
            log_path=doc.get("log_path"),
            static_dir=doc.get("static_dir"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ServiceConfig":
        return cls.from_dict(json.loads(text))


class _Pending:
    __slots__ = ("event", "future")

    def __init__(self, event: dict, future: asyncio.Future):
        self.event = event
        self.future = future


class MatchService:
    """Owns the match, the event queue, and both listeners."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.match = Match(config=config.match)
        self._pending: deque[_Pending] = deque()
        self._wakeup = asyncio.Event()
        self._subscribers: set[asyncio.Queue] = set()
        self._consumer_task: asyncio.Task | None = None
        self._tcp_server: asyncio.base_events.Server | None = None
        self._http_task: asyncio.Task | None = None
        self._uvicorn: uvicorn.Server | None = None
        self._log_file = None
        self.tcp_port = config.tcp_port
        self.http_port = config.http_port

    # -- queue ---------------------------------------------------------

    def enqueue(self, event: dict) -> asyncio.Future:
        """Admit an event, shedding the oldest pending non-hit if full."""
        future = asyncio.get_running_loop().create_future()
        item = _Pending(event, future)
        if len(self._pending) >= self.config.queue_limit:
            victim = next(
                (p for p in self._pending if p.event.get("type") != "hit"),
                item if event.get("type") != "hit" else None,
            )
            if victim is item:
                future.set_exception(
                    ProtocolError("queue full; message shed under backpressure", code="overload")
                )
                return future
            if victim is not None:
                self._pending.remove(victim)
                victim.future.set_exception(
                    ProtocolError("queue full; message shed under backpressure", code="overload")
                )
            # no victim: every pending message is a hit, so the queue grows
        self._pending.append(item)
        self._wakeup.set()
        return future

    async def submit(self, event: dict):
        """Enqueue and wait for application; returns the new log entry."""
        return await self.enqueue(event)

    async def _consume(self):
        while True:
            await self._wakeup.wait()
            self._wakeup.clear()
            while self._pending:
                item = self._pending.popleft()
                try:
                    new_match = apply_event(self.match, item.event)
                except MatchError as exc:
                    if not item.future.done():
                        item.future.set_exception(exc)
                    continue
                new_entries = new_match.log[len(self.match.log) :]
                self.match = new_match
                self._append_log(new_entries)
                self._broadcast()
                if not item.future.done():
                    item.future.set_result(new_entries[-1])

    def _append_log(self, entries):
        if self._log_file is None:
            return
        for entry in entries:
            self._log_file.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
        self._log_file.flush()

    # -- snapshots -----------------------------------------------------

    def snapshot(self) -> dict:
        return self.match.snapshot()

    def subscribe(self) -> asyncio.Queue:
        """A one-slot snapshot queue; newer snapshots replace unread ones."""
        q: asyncio.Queue = asyncio.Queue(maxsize=1)
        self._subscribers.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue):
        self._subscribers.discard(q)

    def _broadcast(self):
        snap = self.snapshot()
        for q in self._subscribers:
            if q.full():
                q.get_nowait()
            q.put_nowait(snap)

    # -- lifecycle -----------------------------------------------------

    async def start(self):
        if self.config.log_path:
            self._log_file = open(self.config.log_path, "a")
        self._consumer_task = asyncio.create_task(self._consume())
        self._tcp_server = await asyncio.start_server(
            self._handle_tcp, self.config.host, self.config.tcp_port
        )
        self.tcp_port = self._tcp_server.sockets[0].getsockname()[1]

        sock = socket.create_server((self.config.host, self.config.http_port))
        self.http_port = sock.getsockname()[1]
        self._uvicorn = uvicorn.Server(
            uvicorn.Config(build_app(self), log_level="warning", access_log=False, lifespan="off")
        )
        self._http_task = asyncio.create_task(self._uvicorn.serve(sockets=[sock]))
        while not self._uvicorn.started:
            await asyncio.sleep(0.005)

    async def stop(self):
        if self._tcp_server is not None:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
        if self._uvicorn is not None:
            self._uvicorn.should_exit = True
            await self._http_task
        if self._consumer_task is not None:
            self._consumer_task.cancel()
            try:
                await self._consumer_task
            except asyncio.CancelledError:
                pass
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    # -- TCP -----------------------------------------------------------

    async def _handle_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        async def send_line(line: str):
            writer.write(line.encode())
            await writer.drain()

        session = Session(self, send_line)
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                if not await session.handle_line(line):
                    break
        except ConnectionResetError:
            pass
        finally:
            await session.close()
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass


class Session:
    """One client conversation, transport-agnostic.

    ``handle_line`` returns False when the connection should close
    (failed authentication).  Protocol errors on an authenticated
    connection get error replies but keep the session alive; a seq
    regression additionally flags the session.
    """

    def __init__(self, service: MatchService, send_line):
        self.service = service
        self._send_line = send_line
        self.tracker = SeqTracker()
        self.authed = False
        self.flagged = False
        self._out_seq = itertools.count(1)
        self._pump_task: asyncio.Task | None = None
        self._subscription: asyncio.Queue | None = None

    async def _send(self, kind: str, payload: dict):
        msg = WireMessage(type=kind, seq=next(self._out_seq), payload=payload, ts_ms=now_ms())
        await self._send_line(encode(msg))

    async def _send_error(self, message: str, code: str, about_seq: int | None = None):
        payload = {"message": message, "code": code}
        if about_seq is not None:
            payload["about_seq"] = about_seq
        await self._send("error", payload)

    async def handle_line(self, line) -> bool:
        try:
            msg = decode(line)
        except ProtocolError as exc:
            await self._send_error(str(exc), exc.code)
            return True
        try:
            status = self.tracker.check(msg.seq)
        except ProtocolError as exc:
            self.flagged = True
            await self._send_error(str(exc), exc.code, about_seq=msg.seq)
            return True
        if status == "duplicate":
            await self._send("ack", {"ack_seq": msg.seq, "duplicate": True})
            return True

        if not self.authed:
            if msg.type == "command" and msg.payload.get("command") == "auth":
                if msg.payload.get("token") == self.service.config.token:
                    self.authed = True
                    await self._send("ack", {"ack_seq": msg.seq})
                    return True
                await self._send_error("bad token", "auth", about_seq=msg.seq)
                return False
            await self._send_error("authenticate first", "auth", about_seq=msg.seq)
            return False

        if msg.type == "command":
            command = msg.payload.get("command")
            if command == "auth":
                await self._send("ack", {"ack_seq": msg.seq})
                return True
            if command == "subscribe":
                self._start_pump()
                await self._send("ack", {"ack_seq": msg.seq})
                await self._send("state", {"snapshot": self.service.snapshot()})
                return True
            if command not in GAME_COMMANDS:
                await self._send_error(f"unknown command {command!r}", "bad_command", msg.seq)
                return True
            event = {"type": command}
            event.update({k: v for k, v in msg.payload.items() if k != "command"})
        elif msg.type in ("hit", "sword_clash", "override"):
            event = {"type": msg.type}
            event.update(msg.payload)
        else:
            await self._send_error(f"clients may not send {msg.type!r}", "bad_direction", msg.seq)
            return True

        try:
            entry = await self.service.submit(event)
        except (MatchError, ProtocolError) as exc:
            code = exc.code if isinstance(exc, ProtocolError) else "match"
            await self._send_error(str(exc), code, about_seq=msg.seq)
            return True
        await self._send(
            "ack", {"ack_seq": msg.seq, "disposition": entry.disposition, "log_seq": entry.seq}
        )
        return True

    def _start_pump(self):
        if self._pump_task is not None:
            return
        self._subscription = self.service.subscribe()

        async def pump():
            while True:
                snap = await self._subscription.get()
                await self._send("state", {"snapshot": snap})

        self._pump_task = asyncio.create_task(pump())

    async def close(self):
        if self._pump_task is not None:
            self._pump_task.cancel()
            try:
                await self._pump_task
            except asyncio.CancelledError:
                pass
            self._pump_task = None
        if self._subscription is not None:
            self.service.unsubscribe(self._subscription)
            self._subscription = None


def build_app(service: MatchService) -> FastAPI:
    app = FastAPI(title="parablude match service", docs_url=None, redoc_url=None)

    @app.get("/state")
    async def state():
        return JSONResponse(service.snapshot())

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await websocket.accept()
        session = Session(service, websocket.send_text)
        try:
            while True:
                text = await websocket.receive_text()
                if not text.strip():
                    continue
                if not await session.handle_line(text):
                    break
        except WebSocketDisconnect:
            pass
        finally:
            await session.close()
            try:
                await websocket.close()
            except RuntimeError:
                pass

    static_dir = service.config.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")
    return app


async def run_service(config: ServiceConfig):
    """Start both listeners and serve until cancelled."""
    service = MatchService(config)
    await service.start()
    try:
        await asyncio.Event().wait()
    finally:
        await service.stop()
