"""In-process topic broker with a durable per-topic log and at-least-once delivery.

Every publish is appended (and by default fsync'd) to
``<data_dir>/<topic>.jsonl`` before the receipt is returned. Subscriptions
pull deliveries; an unacked delivery comes back with ``redelivered=True``
once its ack deadline passes, on ``nack``, or when the consumer detaches.

With the default ``prefetch=1`` a subscription has at most one message in
flight, so a consumer sees each topic in non-decreasing seq order:
duplicates may repeat a seq, but nothing older arrives after something newer.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

from .topics import topic_matches, validate_pattern, validate_topic

log = logging.getLogger(__name__)

DEFAULT_MAX_PAYLOAD = 1 << 20
CURSOR_DIR = ".cursors"


class BusError(Exception):
    pass


class PayloadTooLarge(BusError):
    pass


class UnknownSubscription(BusError, KeyError):
    pass


class BusDisconnected(BusError, ConnectionError):
    pass


@dataclass
class Envelope:
    topic: str
    payload: Any = None
    command_type: str = ""
    group: str = ""
    msg_id: str = ""
    priority_hint: float = 0.0
    ts_us: int = 0
    seq: int = -1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, rec: dict) -> "Envelope":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in rec.items() if k in names})


@dataclass(frozen=True)
class Receipt:
    msg_id: str
    topic: str
    seq: int
    duplicate: bool = False


@dataclass(frozen=True)
class Delivery:
    envelope: Envelope
    subscription: str
    redelivered: bool = False
    attempt: int = 1

    @property
    def msg_id(self) -> str:
        return self.envelope.msg_id

    def to_json(self) -> dict:
        return {**self.envelope.to_json(), "redelivered": self.redelivered, "attempt": self.attempt}


@dataclass
class _Logged:
    offset: int
    envelope: Envelope


@dataclass
class _SubState:
    name: str
    pattern: str
    durable: bool
    ack_deadline_ms: float
    prefetch: int
    attached: bool = True
    # (logged, redelivered, attempts)
    pending: deque = field(default_factory=deque)
    inflight: OrderedDict = field(default_factory=OrderedDict)
    cursor: dict = field(default_factory=dict)
    redeliveries: int = 0


class Subscription:
    """Handle returned by :meth:`Broker.subscribe`."""

    def __init__(self, broker: "Broker", name: str):
        self.broker = broker
        self.name = name

    def get(self) -> Delivery | None:
        return self.broker.fetch(self.name)

    def ack(self, msg_id: str) -> bool:
        return self.broker.ack(self.name, msg_id)

    def nack(self, msg_id: str) -> None:
        self.broker.nack(self.name, msg_id)

    def detach(self) -> None:
        self.broker.detach(self.name)

    def drain(self, handler: Callable[[Delivery], bool | None], limit: int | None = None) -> int:
        """Feed available deliveries to ``handler``, acking unless it returns False.

        The handler runs outside the broker lock.
        """
        n = 0
        while limit is None or n < limit:
            d = self.get()
            if d is None:
                break
            n += 1
            if handler(d) is False:
                self.nack(d.msg_id)
            else:
                self.ack(d.msg_id)
        return n

    def __iter__(self) -> Iterator[Delivery]:
        while (d := self.get()) is not None:
            yield d

    @property
    def pattern(self) -> str:
        return self.broker._subs[self.name].pattern


class Broker:
    def __init__(
        self,
        data_dir: str | Path | None = None,
        *,
        fsync: bool = True,
        max_payload_bytes: int = DEFAULT_MAX_PAYLOAD,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.fsync = fsync
        self.max_payload_bytes = max_payload_bytes
        self.clock = clock
        self._lock = threading.RLock()
        self._logs: dict[str, list[_Logged]] = {}
        self._files: dict[str, Any] = {}
        self._receipts: dict[str, Receipt] = {}
        self._subs: dict[str, _SubState] = {}
        self._offset = 0
        self._anon = 0
        self.stats = {"published": 0, "duplicates_published": 0, "delivered": 0,
                      "redelivered": 0, "acked": 0, "unknown_acks": 0}
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- persistence -------------------------------------------------------

    def _recover(self) -> None:
        records: list[_Logged] = []
        for path in sorted(self.data_dir.glob("*.jsonl")):
            topic = path.stem
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        # torn final write from a crash; it was never receipted
                        log.warning("%s:%d: dropping unreadable log line", path, lineno)
                        continue
                    env = Envelope.from_json(rec["envelope"])
                    records.append(_Logged(rec["offset"], env))
                    self._logs.setdefault(topic, []).append(records[-1])
        for lg in self._logs.values():
            lg.sort(key=lambda r: r.envelope.seq)
        for r in records:
            env = r.envelope
            self._receipts[env.msg_id] = Receipt(env.msg_id, env.topic, env.seq)
            self._offset = max(self._offset, r.offset + 1)

    def _append(self, topic: str, rec: _Logged) -> None:
        self._logs.setdefault(topic, []).append(rec)
        if self.data_dir is None:
            return
        fh = self._files.get(topic)
        if fh is None:
            fh = self._files[topic] = open(self.data_dir / f"{topic}.jsonl", "a", encoding="utf-8")
        line = json.dumps({"offset": rec.offset, "envelope": rec.envelope.to_json()},
                          ensure_ascii=False, separators=(",", ":"))
        fh.write(line + "\n")
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())

    def _cursor_path(self, name: str) -> Path | None:
        if self.data_dir is None:
            return None
        return self.data_dir / CURSOR_DIR / f"{name}.json"

    def _load_cursor(self, name: str) -> dict:
        p = self._cursor_path(name)
        if p is None or not p.exists():
            return {}
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    def _save_cursor(self, sub: _SubState) -> None:
        p = self._cursor_path(sub.name)
        if p is None or not sub.durable:
            return
        p.parent.mkdir(exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(sub.cursor, sort_keys=True))
        tmp.replace(p)

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- publishing --------------------------------------------------------

    def publish(self, env: Envelope) -> Receipt:
        """Log ``env`` durably, then route it. Re-publishing a known msg_id returns the original receipt."""
        validate_topic(env.topic)
        try:
            body = json.dumps(env.payload, ensure_ascii=False)
        except (TypeError, ValueError) as exc:
            raise BusError(f"payload is not JSON-serializable: {exc}") from exc
        if len(body.encode("utf-8")) > self.max_payload_bytes:
            raise PayloadTooLarge(f"payload exceeds {self.max_payload_bytes} bytes")
        with self._lock:
            if env.msg_id and env.msg_id in self._receipts:
                self.stats["duplicates_published"] += 1
                r = self._receipts[env.msg_id]
                return Receipt(r.msg_id, r.topic, r.seq, duplicate=True)
            seq = len(self._logs.get(env.topic, ()))
            env = Envelope(**{**asdict(env), "seq": seq})
            # payload stored as its JSON round-trip so replays match deliveries
            env.payload = json.loads(body)
            if not env.msg_id:
                env.msg_id = f"{env.topic}:{seq}"
            if not env.ts_us:
                env.ts_us = int(self.clock() * 1e6)
            rec = _Logged(self._offset, env)
            self._offset += 1
            self._append(env.topic, rec)
            receipt = Receipt(env.msg_id, env.topic, seq)
            self._receipts[env.msg_id] = receipt
            self.stats["published"] += 1
            for sub in self._subs.values():
                if topic_matches(sub.pattern, env.topic):
                    sub.pending.append((rec, False, 0))
            return receipt

    def replay(self, topic: str, from_seq: int = 0) -> Iterator[Envelope]:
        if from_seq < 0:
            raise ValueError("from_seq must be >= 0")
        with self._lock:
            records = list(self._logs.get(topic, ())[from_seq:])
        for r in records:
            yield r.envelope

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._logs)

    def log_size(self, topic: str) -> int:
        with self._lock:
            return len(self._logs.get(topic, ()))

    # -- consuming ---------------------------------------------------------

    def subscribe(
        self,
        pattern: str,
        *,
        name: str | None = None,
        durable: bool = True,
        ack_deadline_ms: float = 1000.0,
        prefetch: int = 1,
    ) -> Subscription:
        """Register (or re-attach) a subscription.

        A new durable subscription starts with every logged matching message
        after its stored cursor; a non-durable one sees only later publishes.
        Re-attaching by name requeues whatever was in flight as redelivered.
        """
        validate_pattern(pattern)
        if prefetch < 1:
            raise ValueError("prefetch must be >= 1")
        with self._lock:
            if name is not None and name in self._subs:
                sub = self._subs[name]
                if sub.pattern != pattern:
                    raise BusError(f"subscription {name!r} already bound to {sub.pattern!r}")
                self._requeue_inflight(sub)
                sub.attached = True
                return Subscription(self, name)
            if name is None:
                self._anon += 1
                name = f"sub-{self._anon}"
            sub = _SubState(name, pattern, durable, ack_deadline_ms, prefetch)
            if durable:
                sub.cursor = self._load_cursor(name)
                backlog = [
                    r for topic, lg in self._logs.items() if topic_matches(pattern, topic)
                    for r in lg if r.envelope.seq > sub.cursor.get(topic, -1)
                ]
                backlog.sort(key=lambda r: r.offset)
                sub.pending.extend((r, False, 0) for r in backlog)
            self._subs[name] = sub
            return Subscription(self, name)

    def _sub(self, name: str) -> _SubState:
        try:
            return self._subs[name]
        except KeyError:
            raise UnknownSubscription(name) from None

    def _requeue_inflight(self, sub: _SubState) -> None:
        items = list(sub.inflight.values())
        sub.inflight.clear()
        for rec, _deadline, attempts in reversed(items):
            sub.pending.appendleft((rec, True, attempts))

    def _expire(self, sub: _SubState, now_ms: float) -> None:
        expired = [k for k, (_, deadline, _) in sub.inflight.items() if deadline <= now_ms]
        for msg_id in reversed(expired):
            rec, _, attempts = sub.inflight.pop(msg_id)
            sub.pending.appendleft((rec, True, attempts))

    def fetch(self, name: str) -> Delivery | None:
        with self._lock:
            sub = self._sub(name)
            if not sub.attached:
                raise BusDisconnected(f"subscription {name!r} is detached")
            now_ms = self.clock() * 1000.0
            self._expire(sub, now_ms)
            if len(sub.inflight) >= sub.prefetch or not sub.pending:
                return None
            rec, redelivered, attempts = sub.pending.popleft()
            attempts += 1
            sub.inflight[rec.envelope.msg_id] = (rec, now_ms + sub.ack_deadline_ms, attempts)
            self.stats["delivered"] += 1
            if redelivered:
                self.stats["redelivered"] += 1
                sub.redeliveries += 1
            return Delivery(rec.envelope, name, redelivered, attempts)

    def ack(self, name: str, msg_id: str) -> bool:
        with self._lock:
            sub = self._sub(name)
            entry = sub.inflight.pop(msg_id, None)
            if entry is None:
                self.stats["unknown_acks"] += 1
                log.warning("ack for unknown or already-acked message %r on %r", msg_id, name)
                return False
            env = entry[0].envelope
            sub.cursor[env.topic] = max(sub.cursor.get(env.topic, -1), env.seq)
            self.stats["acked"] += 1
            self._save_cursor(sub)
            return True

    def nack(self, name: str, msg_id: str) -> None:
        with self._lock:
            sub = self._sub(name)
            entry = sub.inflight.pop(msg_id, None)
            if entry is None:
                log.warning("nack for unknown message %r on %r", msg_id, name)
                return
            rec, _, attempts = entry
            sub.pending.appendleft((rec, True, attempts))

    def detach(self, name: str) -> None:
        """Consumer went away: in-flight messages return to the queue.

        Non-durable subscriptions are dropped entirely.
        """
        with self._lock:
            sub = self._subs.get(name)
            if sub is None:
                return
            if not sub.durable:
                del self._subs[name]
                return
            self._requeue_inflight(sub)
            sub.attached = False

    def unsubscribe(self, name: str) -> None:
        with self._lock:
            self._subs.pop(name, None)

    def backlog(self, name: str) -> int:
        with self._lock:
            sub = self._sub(name)
            return len(sub.pending) + len(sub.inflight)


class BusConnection:
    """Publisher-side handle that can be disconnected to simulate outages."""

    def __init__(self, broker: Broker):
        self.broker = broker
        self.connected = True

    def disconnect(self) -> None:
        self.connected = False

    def reconnect(self) -> None:
        self.connected = True

    def publish(self, env: Envelope) -> Receipt:
        if not self.connected:
            raise BusDisconnected("bus connection is down")
        return self.broker.publish(env)
