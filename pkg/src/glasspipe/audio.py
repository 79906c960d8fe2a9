"""Sliding-window segmentation and energy/ZCR voice activity detection.

Samples are mono PCM. Integer input is treated as signed 16-bit and scaled
to [-1, 1) by 1/32768; float input is assumed to be normalized already.
Window and hop lengths are converted to whole sample counts once, so
overlap checks are done on sample indices rather than float timestamps.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

INT16_SCALE = 32768.0


class SegmenterConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PcmStream:
    samples: np.ndarray
    sample_rate_hz: int = 16000
    start_time_s: float = 0.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError("expected mono samples (1-D array)")
        if samples.dtype.kind == "f" and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def normalized(self) -> np.ndarray:
        return normalize(self.samples)


@dataclass(frozen=True)
class SegmenterConfig:
    window_duration_s: float = 1.0
    hop_s: float = 0.5
    energy_threshold: float = 2.0
    zcr_threshold: float = 0.35

    def validate(self) -> None:
        if self.window_duration_s <= 0:
            raise SegmenterConfigError("window_duration_s must be positive")
        if not 0 < self.hop_s <= self.window_duration_s:
            raise SegmenterConfigError(
                f"hop_s must satisfy 0 < hop_s <= window_duration_s "
                f"(got hop_s={self.hop_s}, window_duration_s={self.window_duration_s})"
            )
        if self.energy_threshold < 0:
            raise SegmenterConfigError("energy_threshold must be non-negative")
        if not 0 <= self.zcr_threshold <= 1:
            raise SegmenterConfigError("zcr_threshold must lie in [0, 1]")

    def window_samples(self, rate_hz: int) -> int:
        return int(round(self.window_duration_s * rate_hz))

    def hop_samples(self, rate_hz: int) -> int:
        return int(round(self.hop_s * rate_hz))


@dataclass(frozen=True)
class AudioWindow:
    index: int
    start_time_s: float
    end_time_s: float
    samples: np.ndarray
    energy: float
    zcr: float
    start_sample: int = 0


@dataclass(frozen=True)
class VadDecision:
    window_index: int
    is_speech: bool
    energy: float
    zcr: float


def normalize(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.dtype.kind in "iu":
        return samples.astype(np.float64) / INT16_SCALE
    return samples.astype(np.float64, copy=False)


def frame_energy(x: np.ndarray) -> float:
    x = normalize(x)
    return float(np.dot(x, x))


def zero_crossing_rate(x: np.ndarray) -> float:
    """Fraction of adjacent sample pairs whose signs differ.

    Zero counts as positive. A single-sample frame has rate 0.
    """
    x = np.asarray(x)
    if len(x) < 2:
        return 0.0
    positive = x >= 0
    changes = np.count_nonzero(positive[1:] != positive[:-1])
    return changes / (len(x) - 1)


def overlap_ratio(cfg: SegmenterConfig) -> float:
    cfg.validate()
    return (cfg.window_duration_s - cfg.hop_s) / cfg.window_duration_s


def next_window(stream: PcmStream, cfg: SegmenterConfig, index: int) -> AudioWindow | None:
    """Return window ``index`` of the stream, or None once a full window no longer fits.

    The partial tail is discarded rather than zero-padded.
    """
    cfg.validate()
    if index < 0:
        raise ValueError("index must be non-negative")
    rate = stream.sample_rate_hz
    win = cfg.window_samples(rate)
    start = index * cfg.hop_samples(rate)
    if win == 0 or start + win > len(stream.samples):
        return None
    chunk = stream.samples[start:start + win]
    t0 = stream.start_time_s + start / rate
    return AudioWindow(
        index=index,
        start_time_s=t0,
        end_time_s=t0 + win / rate,
        samples=chunk,
        energy=frame_energy(chunk),
        zcr=zero_crossing_rate(chunk),
        start_sample=start,
    )


def iter_windows(stream: PcmStream, cfg: SegmenterConfig) -> Iterator[AudioWindow]:
    index = 0
    while (w := next_window(stream, cfg, index)) is not None:
        yield w
        index += 1


def vad_classify(window: AudioWindow, cfg: SegmenterConfig) -> VadDecision:
    if len(window.samples) == 0:
        raise ValueError("cannot classify an empty window")
    energy = frame_energy(window.samples)
    zcr = zero_crossing_rate(window.samples)
    speech = energy > cfg.energy_threshold and zcr < cfg.zcr_threshold
    return VadDecision(window.index, bool(speech), energy, zcr)


def segment(stream: PcmStream, cfg: SegmenterConfig) -> Iterator[tuple[AudioWindow, VadDecision]]:
    for w in iter_windows(stream, cfg):
        yield w, vad_classify(w, cfg)


def decision_record(window: AudioWindow, decision: VadDecision) -> dict:
    return {
        "index": window.index,
        "start_s": window.start_time_s,
        "end_s": window.end_time_s,
        "energy": decision.energy,
        "zcr": decision.zcr,
        "is_speech": decision.is_speech,
    }


def write_ndjson(stream: PcmStream, cfg: SegmenterConfig, out: TextIO) -> int:
    """Write one JSON record per window; returns the number of speech windows."""
    n_speech = 0
    for w, d in segment(stream, cfg):
        out.write(json.dumps(decision_record(w, d)) + "\n")
        n_speech += d.is_speech
    return n_speech


def read_wav(path: str | Path) -> PcmStream:
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM WAV is supported")
        rate = wf.getframerate()
        channels = wf.getnchannels()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2")
    if channels > 1:
        # downmix, keeping int16 range
        samples = samples.reshape(-1, channels).mean(axis=1).round().astype(np.int16)
    return PcmStream(samples.astype(np.int16), rate)


def read_raw_pcm(path: str | Path, rate_hz: int = 16000) -> PcmStream:
    return PcmStream(np.fromfile(path, dtype="<i2").astype(np.int16), rate_hz)


def load_audio(path: str | Path, rate_hz: int = 16000) -> PcmStream:
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return read_wav(path)
    return read_raw_pcm(path, rate_hz)


def write_wav(path: str | Path, stream: PcmStream) -> None:
    samples = stream.samples
    if samples.dtype.kind == "f":
        samples = np.clip(np.round(samples * INT16_SCALE), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(stream.sample_rate_hz)
        wf.writeframes(np.asarray(samples, dtype="<i2").tobytes())
