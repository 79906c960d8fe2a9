"""Length-prefixed JSON over TCP.

Each frame is a 4-byte big-endian length followed by that many bytes of
UTF-8 JSON. Requests carry ``op`` in publish|subscribe|ack|nack|replay.
After a ``subscribe`` the connection turns into a consumer stream: the
server pushes ``{"op": "deliver", ...}`` frames and reads ack/nack frames.
Closing a consumer connection detaches its subscription.
"""
from __future__ import annotations

import json
import logging
import select
import socket
import socketserver
import struct
import threading

from .broker import Broker, BusError, Envelope

log = logging.getLogger(__name__)

MAX_FRAME = 16 << 20
_HEADER = struct.Struct(">I")


class FrameError(BusError):
    pass


def encode_frame(obj) -> bytes:
    body = json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed connection")
        buf += chunk
    return bytes(buf)


def send_frame(sock: socket.socket, obj) -> None:
    sock.sendall(encode_frame(obj))


def recv_frame(sock: socket.socket):
    (n,) = _HEADER.unpack(_recv_exact(sock, _HEADER.size))
    if n > MAX_FRAME:
        raise FrameError(f"frame of {n} bytes exceeds limit")
    return json.loads(_recv_exact(sock, n).decode("utf-8"))


class _Handler(socketserver.BaseRequestHandler):
    server: "BusServer"

    def handle(self):
        sock = self.request
        try:
            while not self.server.stopping.is_set():
                try:
                    req = recv_frame(sock)
                except ConnectionError:
                    return
                if req.get("op") == "subscribe":
                    self._consumer_loop(sock, req)
                    return
                send_frame(sock, self.server.dispatch(req))
        except (OSError, FrameError, json.JSONDecodeError) as exc:
            log.info("connection closed: %s", exc)

    def _consumer_loop(self, sock, req):
        broker = self.server.broker
        try:
            sub = broker.subscribe(
                req["pattern"],
                name=req.get("name"),
                durable=bool(req.get("durable", True)),
                ack_deadline_ms=float(req.get("ack_deadline_ms", 1000.0)),
            )
        except (BusError, ValueError, KeyError) as exc:
            send_frame(sock, {"op": "error", "error": str(exc)})
            return
        send_frame(sock, {"op": "subscribed", "name": sub.name})
        try:
            while not self.server.stopping.is_set():
                d = sub.get()
                if d is not None:
                    send_frame(sock, {"op": "deliver", **d.to_json()})
                    continue
                ready, _, _ = select.select([sock], [], [], self.server.poll_s)
                if not ready:
                    continue
                msg = recv_frame(sock)
                op = msg.get("op")
                if op == "ack":
                    sub.ack(msg["msg_id"])
                elif op == "nack":
                    sub.nack(msg["msg_id"])
        except (ConnectionError, OSError):
            pass
        finally:
            broker.detach(sub.name)


class BusServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0, poll_s: float = 0.02):
        self.broker = broker
        self.poll_s = poll_s
        self.stopping = threading.Event()
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def dispatch(self, req: dict) -> dict:
        op = req.get("op")
        try:
            if op == "publish":
                r = self.broker.publish(Envelope.from_json(req))
                return {"op": "receipt", "msg_id": r.msg_id, "topic": r.topic, "seq": r.seq,
                        "duplicate": r.duplicate}
            if op == "replay":
                msgs = [e.to_json() for e in self.broker.replay(req["topic"], int(req.get("from_seq", 0)))]
                return {"op": "replay", "messages": msgs}
            if op in ("ack", "nack"):
                if op == "ack":
                    ok = self.broker.ack(req["name"], req["msg_id"])
                else:
                    self.broker.nack(req["name"], req["msg_id"])
                    ok = True
                return {"op": "ok", "ok": ok}
            return {"op": "error", "error": f"unknown op {op!r}"}
        except (BusError, ValueError, KeyError, TypeError) as exc:
            return {"op": "error", "error": str(exc)}

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.stopping.set()
        self.shutdown()
        self.server_close()


class BusClient:
    """Request/response client for publish, replay and out-of-band ack/nack."""

    def __init__(self, host: str = "127.0.0.1", port: int = 5672, timeout: float = 5.0):
        self.addr = (host, port)
        self.timeout = timeout
        self.sock = socket.create_connection(self.addr, timeout=timeout)

    def _call(self, req: dict) -> dict:
        send_frame(self.sock, req)
        resp = recv_frame(self.sock)
        if resp.get("op") == "error":
            raise BusError(resp["error"])
        return resp

    def publish(self, topic: str, payload, **fields) -> dict:
        return self._call({"op": "publish", "topic": topic, "payload": payload, **fields})

    def replay(self, topic: str, from_seq: int = 0) -> list[dict]:
        return self._call({"op": "replay", "topic": topic, "from_seq": from_seq})["messages"]

    def subscribe(self, pattern: str, **opts) -> "RemoteSubscription":
        return RemoteSubscription(self.addr, pattern, timeout=self.timeout, **opts)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RemoteSubscription:
    def __init__(self, addr, pattern: str, *, name: str | None = None, durable: bool = True,
                 ack_deadline_ms: float = 1000.0, timeout: float = 5.0):
        self.sock = socket.create_connection(addr, timeout=timeout)
        req = {"op": "subscribe", "pattern": pattern, "durable": durable, "ack_deadline_ms": ack_deadline_ms}
        if name is not None:
            req["name"] = name
        send_frame(self.sock, req)
        resp = recv_frame(self.sock)
        if resp.get("op") != "subscribed":
            self.sock.close()
            raise BusError(resp.get("error", "subscribe failed"))
        self.name = resp["name"]

    def receive(self, timeout: float | None = None) -> dict | None:
        """Next pushed delivery, or None if nothing arrives within ``timeout``."""
        ready, _, _ = select.select([self.sock], [], [], timeout)
        if not ready:
            return None
        msg = recv_frame(self.sock)
        return msg if msg.get("op") == "deliver" else None

    def ack(self, msg_id: str) -> None:
        send_frame(self.sock, {"op": "ack", "msg_id": msg_id})

    def nack(self, msg_id: str) -> None:
        send_frame(self.sock, {"op": "nack", "msg_id": msg_id})

    def close(self) -> None:
        self.sock.close()
