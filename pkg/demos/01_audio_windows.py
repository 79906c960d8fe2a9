"""
Sliding windows and voice activity
==================================

A second of a 200 Hz tone followed by a second of faint hiss, cut into
overlapping one-second windows and classified by energy and zero-crossing
rate.
"""

import numpy as np

from glasspipe import audio

rate = 16000
t = np.arange(rate) / rate
tone = 0.5 * np.sin(2 * np.pi * 200 * t)
hiss = np.random.default_rng(0).normal(0, 0.002, rate)
stream = audio.PcmStream(np.concatenate([tone, hiss]), rate)

# half-second hop, so consecutive windows share half their samples
cfg = audio.SegmenterConfig(window_duration_s=1.0, hop_s=0.5)
print("overlap ratio:", audio.overlap_ratio(cfg))

for window, decision in audio.segment(stream, cfg):
    label = "speech" if decision.is_speech else "silence"
    print(f"[{window.start_time_s:.1f}, {window.end_time_s:.1f}) s  "
          f"energy={decision.energy:9.3f}  zcr={decision.zcr:.3f}  -> {label}")

# The middle window straddles tone and hiss; its energy is roughly half
# the first window's, still far above the threshold.
