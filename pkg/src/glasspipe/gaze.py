"""Binocular gaze fusion, world-frame mapping and the 30 Hz bus stream.

Noise is stored as a standard deviation and squared where the weight is
computed. The world mapping adds the translation to a direction vector,
so the output is a point one unit along the gaze ray from ``t``.
"""
from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .bus import BusConnection, BusDisconnected, Envelope

DEFAULT_PAIRING_WINDOW_US = 5000
DEFAULT_RATE_HZ = 30


class CalibrationError(ValueError):
    pass


class PairingError(ValueError):
    pass


class SampleDropped(ValueError):
    """Both eyes carried zero weight; no fused sample exists."""


@dataclass(frozen=True, eq=False)
class MonocularSample:
    eye: str
    gaze: np.ndarray
    confidence: float
    noise_sigma: float
    timestamp_us: int

    def __post_init__(self):
        if self.eye not in ("left", "right"):
            raise ValueError(f"eye must be 'left' or 'right', got {self.eye!r}")
        g = np.asarray(self.gaze, dtype=float)
        if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-6:
            raise ValueError("gaze must be a unit 3-vector")
        if not 0 <= self.confidence <= 1 or self.noise_sigma < 0:
            raise ValueError("confidence must lie in [0, 1] and noise_sigma be >= 0")
        object.__setattr__(self, "gaze", g)


@dataclass(frozen=True, eq=False)
class Calibration:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6, rtol=0):
            raise CalibrationError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise CalibrationError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_json(cls, rec: dict) -> "Calibration":
        rot = rec["rotation"]
        if len(rot) != 9 or len(rec["translation"]) != 3:
            raise CalibrationError("expected 9 rotation values (row-major) and 3 translation values")
        return cls(np.asarray(rot, dtype=float).reshape(3, 3), np.asarray(rec["translation"], dtype=float))

    @classmethod
    def load(cls, path: str | Path) -> "Calibration":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class FusedGaze:
    gaze_combined: np.ndarray
    p_world: np.ndarray
    w_left: float
    w_right: float
    timestamp_us: int

    def wire(self, seq: int) -> dict:
        return {
            "ts_us": int(self.timestamp_us),
            "gaze": [float(v) for v in self.gaze_combined],
            "p_world": [float(v) for v in self.p_world],
            "w_l": float(self.w_left),
            "w_r": float(self.w_right),
            "seq": int(seq),
        }


def eye_weight(c: float, sigma: float) -> float:
    if not 0 <= c <= 1 or sigma < 0:
        raise ValueError("confidence must lie in [0, 1] and sigma be >= 0")
    c2 = c * c
    denom = c2 + sigma * sigma
    return c2 / denom if denom > 0 else 0.0


def fuse_vectors(g_left, g_right, w_left: float, w_right: float) -> np.ndarray:
    """Weighted mean of two directions, renormalized to unit length."""
    total = w_left + w_right
    if total <= 0:
        raise SampleDropped("both eye weights are zero")
    v = (w_left * np.asarray(g_left, dtype=float) + w_right * np.asarray(g_right, dtype=float)) / total
    n = np.linalg.norm(v)
    if n == 0:
        # exactly opposed eyes with equal weight: no direction to report
        raise SampleDropped("fused gaze has zero length")
    return v / n


def to_world(g, cal: Calibration) -> np.ndarray:
    return cal.rotation @ np.asarray(g, dtype=float) + cal.translation


def fuse(
    left: MonocularSample,
    right: MonocularSample,
    cal: Calibration | None = None,
    pairing_window_us: int = DEFAULT_PAIRING_WINDOW_US,
) -> FusedGaze:
    if left.eye != "left" or right.eye != "right":
        raise PairingError("fuse expects a (left, right) pair")
    if abs(left.timestamp_us - right.timestamp_us) > pairing_window_us:
        raise PairingError(
            f"samples {left.timestamp_us} and {right.timestamp_us} are more than {pairing_window_us} us apart"
        )
    wl = eye_weight(left.confidence, left.noise_sigma)
    wr = eye_weight(right.confidence, right.noise_sigma)
    g = fuse_vectors(left.gaze, right.gaze, wl, wr)
    cal = cal or Calibration.identity()
    ts = (left.timestamp_us + right.timestamp_us) // 2
    return FusedGaze(g, to_world(g, cal), wl, wr, ts)


def _direction(yaw: float, pitch: float) -> np.ndarray:
    # yaw about y, pitch about x; (0, 0) looks down +z
    return np.array([
        math.sin(yaw) * math.cos(pitch),
        math.sin(pitch),
        math.cos(yaw) * math.cos(pitch),
    ])


def synthetic_gaze(
    duration_s: float,
    rate_hz: float = DEFAULT_RATE_HZ,
    seed: int = 0,
    fixation_s: tuple[float, float] = (0.2, 0.6),
    vergence_rad: float = 0.02,
    jitter_us: int = 1500,
) -> Iterator[tuple[MonocularSample, MonocularSample]]:
    """Scripted fixations joined by one-frame saccades, with seeded perturbations.

    Each fixation holds a random target for a random dwell; the eyes converge
    on it with a small symmetric vergence offset. Confidence and noise are
    perturbed per frame, and the two eye timestamps jitter around the frame
    time by up to ``jitter_us``.
    """
    rng = random.Random(seed)
    n = int(round(duration_s * rate_hz))
    period_us = 1e6 / rate_hz
    remaining = 0
    yaw = pitch = 0.0
    for k in range(n):
        if remaining <= 0:
            yaw = rng.uniform(-0.4, 0.4)
            pitch = rng.uniform(-0.3, 0.3)
            remaining = max(1, int(rng.uniform(*fixation_s) * rate_hz))
        remaining -= 1
        t = jitter_us + int(round(k * period_us))
        pair = []
        for eye, sign in (("left", 1.0), ("right", -1.0)):
            g = _direction(yaw + sign * vergence_rad + rng.gauss(0, 0.003), pitch + rng.gauss(0, 0.003))
            pair.append(MonocularSample(
                eye=eye,
                gaze=g / np.linalg.norm(g),
                confidence=min(1.0, max(0.0, rng.uniform(0.6, 1.0))),
                noise_sigma=rng.uniform(0.02, 0.3),
                timestamp_us=t + rng.randint(-jitter_us, jitter_us),
            ))
        yield pair[0], pair[1]


@dataclass
class GazeStream:
    """Periodic producer publishing fused gaze on ``gaze.<device_id>``.

    Call :meth:`step` once per frame. While the connection is down, messages
    are buffered (oldest dropped beyond ``buffer_s`` seconds) and flushed in
    order on the first step after reconnect.
    """

    source: Iterator[tuple[MonocularSample, MonocularSample]]
    bus: BusConnection
    device_id: str = "glasses0"
    calibration: Calibration = field(default_factory=Calibration.identity)
    rate_hz: float = DEFAULT_RATE_HZ
    buffer_s: float = 10.0
    pairing_window_us: int = DEFAULT_PAIRING_WINDOW_US

    def __post_init__(self):
        self.topic = f"gaze.{self.device_id}"
        self.seq = 0
        self.buffer: deque[dict] = deque(maxlen=max(1, int(self.buffer_s * self.rate_hz)))
        self.counters = {"published": 0, "buffered": 0, "overflow_dropped": 0,
                         "dropped_samples": 0, "pairing_errors": 0}
        self._source = iter(self.source)

    def flush(self) -> int:
        """Publish buffered messages in order; returns how many are still held."""
        try:
            self._flush()
        except BusDisconnected:
            pass
        return len(self.buffer)

    def _flush(self) -> None:
        while self.buffer:
            wire = self.buffer[0]
            self.bus.publish(self._envelope(wire))
            self.buffer.popleft()
            self.counters["published"] += 1

    def _envelope(self, wire: dict) -> Envelope:
        return Envelope(
            topic=self.topic,
            payload=wire,
            command_type="gaze",
            group=self.device_id,
            msg_id=f"{self.topic}:{wire['seq']}",
            ts_us=wire["ts_us"],
        )

    def step(self) -> bool:
        """Process one frame; returns False when the source is exhausted."""
        try:
            left, right = next(self._source)
        except StopIteration:
            return False
        try:
            fused = fuse(left, right, self.calibration, self.pairing_window_us)
        except SampleDropped:
            self.counters["dropped_samples"] += 1
            return True
        except PairingError:
            self.counters["pairing_errors"] += 1
            return True
        if len(self.buffer) == self.buffer.maxlen:
            self.counters["overflow_dropped"] += 1
        self.buffer.append(fused.wire(self.seq))
        self.seq += 1
        try:
            self._flush()
        except BusDisconnected:
            self.counters["buffered"] = len(self.buffer)
        return True

    def run(self, max_frames: int | None = None) -> int:
        n = 0
        while (max_frames is None or n < max_frames) and self.step():
            n += 1
        return n


def stream(source, bus: BusConnection, rate_hz: float = DEFAULT_RATE_HZ, **kwargs) -> GazeStream:
    return GazeStream(source, bus, rate_hz=rate_hz, **kwargs)
