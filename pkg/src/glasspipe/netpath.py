"""Connection-method scoring, path selection and adaptive streaming rate,
driven by a replayable step-function link trace."""
from __future__ import annotations

import bisect
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

METHODS = ("direct_lan", "port_forward", "vpn")
_PREFERENCE = {m: i for i, m in enumerate(METHODS)}

DEFAULT_TICK_S = 0.1


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class LinkMetrics:
    latency_s: float
    bandwidth: float
    reliability: float

    def __post_init__(self):
        if not (math.isfinite(self.latency_s) and self.latency_s >= 0):
            raise ValueError(f"latency_s must be finite and >= 0, got {self.latency_s}")
        if not 0 <= self.bandwidth <= 1:
            raise ValueError(f"bandwidth must be normalized to [0, 1], got {self.bandwidth}")
        if not 0 <= self.reliability <= 1:
            raise ValueError(f"reliability must lie in [0, 1], got {self.reliability}")


@dataclass(frozen=True)
class PathWeights:
    w1: float = 0.5
    w2: float = 0.3
    w3: float = 0.2
    epsilon: float = 1e-3

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(not 0 <= w <= 1 for w in ws) or abs(sum(ws) - 1) > 1e-9:
            raise ValueError(f"path weights must lie in [0, 1] and sum to 1: {ws}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class RateConfig:
    r_max: float
    b_required: float
    lam: float = 0.5

    def __post_init__(self):
        if self.r_max <= 0 or self.b_required <= 0:
            raise ValueError("r_max and b_required must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass
class PathCandidate:
    method_id: str
    metrics: LinkMetrics
    score: float = float("nan")

    def __post_init__(self):
        if self.method_id not in _PREFERENCE:
            raise ValueError(f"unknown method {self.method_id!r}; expected one of {METHODS}")

    def rescore(self, w: PathWeights) -> float:
        self.score = score_method(self.metrics, w)
        return self.score

    def update(self, metrics: LinkMetrics, w: PathWeights) -> None:
        self.metrics = metrics
        self.rescore(w)


def score_method(m: LinkMetrics, w: PathWeights) -> float:
    return w.w1 / (m.latency_s + w.epsilon) + w.w2 * m.bandwidth + w.w3 * m.reliability


def select_path(candidates: Sequence[PathCandidate], w: PathWeights) -> str:
    """Highest-scoring method; exact ties go direct_lan > port_forward > vpn."""
    if not candidates:
        raise ValueError("no candidate paths")
    for c in candidates:
        c.rescore(w)
    best = min(candidates, key=lambda c: (-c.score, _PREFERENCE[c.method_id]))
    return best.method_id


def adaptive_rate(t: float, cfg: RateConfig, b_available: float, latency_s: float) -> float:
    """Streaming rate at time ``t``; ``t`` only labels the sample."""
    if b_available < 0:
        raise ValueError("b_available must be non-negative")
    if latency_s < 0:
        raise ValueError("latency_s must be non-negative")
    return cfg.r_max * min(1.0, b_available / cfg.b_required) * math.exp(-cfg.lam * latency_s)


@dataclass(frozen=True)
class TracePoint:
    t_s: float
    b_available: float
    latency_s: float
    loss_prob: float = 0.0

    @classmethod
    def from_json(cls, rec) -> "TracePoint":
        if isinstance(rec, Mapping):
            return cls(float(rec["t_s"]), float(rec["b_available"]), float(rec["latency_s"]),
                       float(rec.get("loss_prob", 0.0)))
        return cls(*(float(v) for v in rec))


@dataclass
class LinkSession:
    """Link whose conditions at time t are those of the last trace point at or before t.

    Times before the first point read the first point. ``should_drop`` draws
    from a private seeded RNG, so a given seed and call sequence always yields
    the same drop schedule.
    """

    trace: list[TracePoint]
    seed: int = 0
    reference_capacity: float | None = None
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if not self.trace:
            raise TraceError("trace is empty")
        times = [p.t_s for p in self.trace]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise TraceError("trace times must be strictly increasing")
        for p in self.trace:
            if p.b_available < 0 or p.latency_s < 0 or not 0 <= p.loss_prob <= 1:
                raise TraceError(f"out-of-range trace point {p}")
        self._times = times
        if self.reference_capacity is None:
            self.reference_capacity = max(p.b_available for p in self.trace) or 1.0
        self._rng = random.Random(self.seed)

    @property
    def start_s(self) -> float:
        return self._times[0]

    @property
    def end_s(self) -> float:
        return self._times[-1]

    def at(self, t: float) -> TracePoint:
        i = bisect.bisect_right(self._times, t) - 1
        return self.trace[max(i, 0)]

    def metrics_at(self, t: float) -> LinkMetrics:
        p = self.at(t)
        return LinkMetrics(
            latency_s=p.latency_s,
            bandwidth=min(1.0, p.b_available / self.reference_capacity),
            reliability=1.0 - p.loss_prob,
        )

    def rate_at(self, t: float, cfg: RateConfig) -> float:
        p = self.at(t)
        return adaptive_rate(t, cfg, p.b_available, p.latency_s)

    def should_drop(self, t: float) -> bool:
        return self._rng.random() < self.at(t).loss_prob

    def reseed(self, seed: int | None = None) -> None:
        self._rng = random.Random(self.seed if seed is None else seed)

    def ticks(self, tick_s: float = DEFAULT_TICK_S, until: float | None = None) -> Iterator[float]:
        end = self.end_s if until is None else until
        n = int(math.floor((end - self.start_s) / tick_s + 1e-9))
        for i in range(n + 1):
            yield self.start_s + i * tick_s


def simulate_link(trace, seed: int = 0, reference_capacity: float | None = None) -> LinkSession:
    points = [p if isinstance(p, TracePoint) else TracePoint.from_json(p) for p in trace]
    return LinkSession(points, seed=seed, reference_capacity=reference_capacity)


def load_trace(path: str | Path, seed: int = 0) -> dict[str, LinkSession]:
    """Load a trace file into one session per connection method.

    The file is either a bare JSON array of points (taken as a single
    ``direct_lan`` link) or an object mapping method ids to arrays. All
    methods share one reference capacity so their bandwidths compare.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        data = {"direct_lan": data}
    if not isinstance(data, dict) or not data:
        raise TraceError(f"{path}: expected an array or a non-empty object of arrays")
    parsed = {m: [TracePoint.from_json(r) for r in pts] for m, pts in data.items()}
    ref = max(p.b_available for pts in parsed.values() for p in pts) or 1.0
    return {m: LinkSession(pts, seed=seed + i, reference_capacity=ref)
            for i, (m, pts) in enumerate(sorted(parsed.items()))}


def score_sessions(
    sessions: Mapping[str, LinkSession],
    weights: PathWeights = PathWeights(),
    rate_cfg: RateConfig | None = None,
    tick_s: float = DEFAULT_TICK_S,
) -> Iterator[dict]:
    """Per-tick path choice: ``{t, method, score, rate}`` for each 100 ms tick."""
    start = min(s.start_s for s in sessions.values())
    end = max(s.end_s for s in sessions.values())
    if rate_cfg is None:
        ref = next(iter(sessions.values())).reference_capacity
        rate_cfg = RateConfig(r_max=ref, b_required=ref)
    n = int(math.floor((end - start) / tick_s + 1e-9))
    candidates = {m: PathCandidate(m, s.metrics_at(start)) for m, s in sessions.items()}
    for i in range(n + 1):
        t = round(start + i * tick_s, 9)
        for m, s in sessions.items():
            candidates[m].update(s.metrics_at(t), weights)
        method = select_path(list(candidates.values()), weights)
        yield {
            "t": t,
            "method": method,
            "score": candidates[method].score,
            "rate": sessions[method].rate_at(t, rate_cfg),
        }
