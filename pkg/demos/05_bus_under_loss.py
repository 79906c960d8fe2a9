"""
At-least-once delivery over a lossy link
========================================

Two hundred task messages cross a link that drops 30 % of requests,
receipts, deliveries and acks. Publishers retry with the same msg_id and
consumers see redeliveries, yet every message ends up acked once in order.
"""

import tempfile

from glasspipe.bus import Broker, Envelope, VirtualClock
from glasspipe.bus.lossy import LossyChannel, consume_all
from glasspipe.netpath import simulate_link

clock = VirtualClock()
link = simulate_link([(0.0, 1.0, 0.02, 0.3)], seed=2024)

with tempfile.TemporaryDirectory() as tmp:
    broker = Broker(tmp, clock=clock)
    sub = broker.subscribe("task.submit.*", name="scheduler", ack_deadline_ms=100)
    ch = LossyChannel(broker, link, clock)
    for i in range(200):
        ch.publish(Envelope("task.submit.glasses", {"i": i}, "open_url", "glasses", msg_id=f"task-{i}"))
    print("logged:", broker.log_size("task.submit.glasses"))

    seen = consume_all(ch, sub, 200)
    print("deliveries seen:", len(seen), "distinct:", len({d.msg_id for d in seen}))
    print("link counters:", ch.counters)
    print("virtual time elapsed: %.2f s" % clock.now)

    # restart from disk: every receipted message is still there
    again = Broker(tmp)
    print("after restart:", again.log_size("task.submit.glasses"), "messages on disk")
