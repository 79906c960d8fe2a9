"""Drive a broker through a lossy link on a virtual clock.

Requests, receipts, deliveries and acks each pass the link once and may be
dropped according to the link's seeded loss schedule. Senders retry;
publish retries reuse the msg_id so the broker deduplicates them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..netpath import LinkSession
from .broker import Broker, Delivery, Envelope, Receipt, Subscription


class VirtualClock:
    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, dt: float) -> float:
        self.now += dt
        return self.now


@dataclass
class LossyChannel:
    broker: Broker
    link: LinkSession
    clock: VirtualClock
    retry_s: float = 0.05
    max_attempts: int = 10_000
    counters: dict = field(default_factory=lambda: {
        "publish_dropped": 0, "receipt_dropped": 0, "delivery_dropped": 0,
        "ack_dropped": 0, "duplicates_seen": 0,
    })

    def publish(self, env: Envelope) -> Receipt:
        for _ in range(self.max_attempts):
            if self.link.should_drop(self.clock()):
                self.counters["publish_dropped"] += 1
            else:
                receipt = self.broker.publish(env)
                if not self.link.should_drop(self.clock()):
                    return receipt
                self.counters["receipt_dropped"] += 1
            self.clock.advance(self.retry_s)
        raise TimeoutError(f"publish of {env.msg_id!r} never confirmed")

    def receive(self, sub: Subscription) -> Delivery | None:
        d = sub.get()
        if d is None:
            return None
        if self.link.should_drop(self.clock()):
            self.counters["delivery_dropped"] += 1
            return None
        return d

    def ack(self, sub: Subscription, msg_id: str) -> bool:
        if self.link.should_drop(self.clock()):
            self.counters["ack_dropped"] += 1
            return False
        return sub.ack(msg_id)


def consume_all(channel: LossyChannel, sub: Subscription, expected: int,
                tick_s: float = 0.01, max_ticks: int = 1_000_000) -> list[Delivery]:
    """Receive through the lossy channel until ``expected`` distinct messages are acked.

    Returns every delivery the consumer actually saw, duplicates included.
    """
    seen: list[Delivery] = []
    acked: set[str] = set()
    processed: set[str] = set()
    for _ in range(max_ticks):
        if len(acked) >= expected:
            break
        d = channel.receive(sub)
        if d is None:
            channel.clock.advance(tick_s)
            continue
        seen.append(d)
        if d.msg_id in processed:
            channel.counters["duplicates_seen"] += 1
        processed.add(d.msg_id)
        if channel.ack(sub, d.msg_id):
            acked.add(d.msg_id)
    else:
        raise TimeoutError(f"only {len(acked)}/{expected} messages acked")
    return seen
