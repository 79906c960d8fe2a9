"""
Fusing two eyes into one gaze ray
=================================

Each eye's direction is weighted by c^2 / (c^2 + sigma^2), averaged,
renormalized and rotated into the world frame. A 30 Hz stream publishes
the result on the bus and buffers through a disconnect.
"""

import math
import tempfile

import numpy as np

from glasspipe import gaze
from glasspipe.bus import Broker, BusConnection

wl, wr = gaze.eye_weight(0.8, 0.2), gaze.eye_weight(0.5, 0.5)
print("weights:", round(wl, 4), round(wr, 4))
print("fused:", np.round(gaze.fuse_vectors([0, 0, 1], [1, 0, 0], wl, wr), 4))

# a quarter turn about z as the head-to-world calibration
c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
cal = gaze.Calibration(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]), np.zeros(3))
print("world:", np.round(gaze.to_world([1, 0, 0], cal), 6))

with tempfile.TemporaryDirectory() as tmp:
    broker = Broker(tmp, fsync=False)
    conn = BusConnection(broker)
    stream = gaze.stream(gaze.synthetic_gaze(2.0, seed=3), conn, calibration=cal)
    stream.run(30)
    conn.disconnect()
    stream.run(15)
    print("buffered while offline:", len(stream.buffer))
    conn.reconnect()
    stream.run()
    seqs = [e.payload["seq"] for e in broker.replay("gaze.glasses0")]
    print("published", len(seqs), "messages, in order:", seqs == sorted(seqs))
