"""
Choosing a connection path
==========================

Each candidate path is scored from latency, normalized bandwidth and
reliability; the stream rate then shrinks with bandwidth shortfall and
decays exponentially with latency.
"""

import math

from glasspipe import netpath

w = netpath.PathWeights()
cands = [
    netpath.PathCandidate("direct_lan", netpath.LinkMetrics(0.005, 1.0, 0.99)),
    netpath.PathCandidate("port_forward", netpath.LinkMetrics(0.040, 0.6, 0.95)),
    netpath.PathCandidate("vpn", netpath.LinkMetrics(0.080, 0.5, 0.99)),
]
print("chosen:", netpath.select_path(cands, w))
for c in cands:
    print(f"  {c.method_id:12s} {c.score:8.3f}")

# Once the LAN degrades badly, the next-best path takes over.
cands[0].update(netpath.LinkMetrics(2.0, 0.1, 0.2), w)
print("after LAN degrades:", netpath.select_path(cands, w))

cfg = netpath.RateConfig(r_max=8.0, b_required=6.0, lam=0.5)
for lat in (0.0, 0.5, 1.0, 2.0):
    print(f"latency {lat:.1f} s -> rate {netpath.adaptive_rate(0, cfg, 10.0, lat):.3f}"
          f"  (r_max * exp(-0.5 L) = {8 * math.exp(-0.5 * lat):.3f})")

###############################################################################
# A link trace replays step-wise conditions. Drops come from a seeded RNG,
# so the same seed always drops the same messages.

link = netpath.simulate_link([(0.0, 6.0, 0.02, 0.0), (1.0, 6.0, 0.6, 0.3)], seed=1)
print([link.should_drop(t) for t in (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)])
