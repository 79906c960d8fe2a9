"""Scenario runner for the whole voice-to-effect path.

audio -> windows/VAD -> transcript stub -> intent + memory context -> bus
-> scheduler -> stub executor, with optional link-trace scoring and a gaze
stream alongside. Everything that feeds the decision log runs on virtual
time, so two runs with the same seed log identical bytes. Stage latencies
are wall-clock and kept out of the decision log.
"""
from __future__ import annotations

import hashlib
import html
import json
import shutil
import tempfile
import time
import urllib.parse
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import audio, gaze, intent, netpath
from .bus import Broker, BusConnection, Envelope, LossyChannel, VirtualClock
from .memory import MemoryStore
from .scheduler import ResourcePool, Scheduler, SchedulerService, StubExecutor, Task

BUDGET_MS = 200.0
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    seed: int
    intent_registry_path: Path
    transcript: str | None = None
    audio_path: Path | None = None
    memory_seed: list[dict] = field(default_factory=list)
    link_trace_path: Path | None = None
    gaze_script: dict | None = None
    expected_effects: list[dict] = field(default_factory=list)
    capacity: dict = field(default_factory=lambda: {"cpu": 4, "display": 1})
    group: str = "glasses"
    segmenter: dict = field(default_factory=dict)
    fusion_weights: list[float] | None = None
    cutoff: float = intent.DEFAULT_CUTOFF
    retrieval_k: int = 3

    @classmethod
    def from_json(cls, rec: dict, base_dir: Path) -> "Scenario":
        def path(key):
            v = rec.get(key)
            if v is None:
                return None
            p = Path(v)
            p = p if p.is_absolute() else base_dir / p
            if not p.exists():
                raise ScenarioError(f"scenario {rec.get('name')!r}: {key} {p} does not exist")
            return p

        if "name" not in rec or "intent_registry_path" not in rec:
            raise ScenarioError("scenario needs 'name' and 'intent_registry_path'")
        if rec.get("transcript") is None and rec.get("audio_path") is None:
            raise ScenarioError(f"scenario {rec['name']!r} needs a transcript or an audio_path")
        return cls(
            name=rec["name"],
            seed=int(rec.get("seed", 0)),
            intent_registry_path=path("intent_registry_path"),
            transcript=rec.get("transcript"),
            audio_path=path("audio_path"),
            memory_seed=list(rec.get("memory_seed", [])),
            link_trace_path=path("link_trace_path"),
            gaze_script=rec.get("gaze_script"),
            expected_effects=list(rec.get("expected_effects", [])),
            capacity=dict(rec.get("capacity", {"cpu": 4, "display": 1})),
            group=rec.get("group", "glasses"),
            segmenter=dict(rec.get("segmenter", {})),
            fusion_weights=rec.get("fusion_weights"),
            cutoff=float(rec.get("cutoff", intent.DEFAULT_CUTOFF)),
            retrieval_k=int(rec.get("retrieval_k", 3)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        if not path.exists() and (SCENARIO_DIR / f"{path}.json").exists():
            path = SCENARIO_DIR / f"{path}.json"
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), path.parent)


def builtin_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json") if p.stem not in ("intents", "link_trace"))


@dataclass
class RunReport:
    scenario: str
    seed: int
    status: str = "ok"
    failure_stage: str | None = None
    error: str | None = None
    latencies_us: dict = field(default_factory=dict)
    decisions: list = field(default_factory=list)
    effects: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def compute_ms(self) -> float:
        return sum(self.latencies_us.values()) / 1000.0

    def decision_log_bytes(self) -> bytes:
        return json.dumps(normalize_decisions(self.decisions), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")


def normalize_decisions(decisions: list) -> list:
    """Drop wall-clock fields (keys ending ``_wall_us``) so runs compare byte-for-byte."""
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items() if not k.endswith("_wall_us")}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v
    return clean(decisions)


class _Stage:
    def __init__(self, report: RunReport, name: str, timed: bool = True):
        self.report = report
        self.name = name
        self.timed = timed

    def __enter__(self):
        self.t0 = time.perf_counter_ns()
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.timed:
            dt = (time.perf_counter_ns() - self.t0) // 1000
            self.report.latencies_us[self.name] = self.report.latencies_us.get(self.name, 0) + dt
        if exc is not None and self.report.failure_stage is None:
            self.report.status = "failed"
            self.report.failure_stage = self.name
            self.report.error = f"{type(exc).__name__}: {exc}"
        return False


def _fill(template: Any, slots: dict) -> Any:
    if isinstance(template, str):
        quoted = {k: urllib.parse.quote_plus(v) for k, v in slots.items()}
        try:
            return template.format(**quoted)
        except KeyError:
            return template
    if isinstance(template, dict):
        return {k: _fill(v, slots) for k, v in template.items()}
    if isinstance(template, list):
        return [_fill(v, slots) for v in template]
    return template


def _rag_html(title: str, command: str, docs: list) -> str:
    items = "".join(
        f"<section data-doc='{html.escape(d.doc_id)}'><p>{html.escape(d.text)}</p></section>" for d in docs
    )
    return (f"<html><head><title>{html.escape(title)}</title></head><body>"
            f"<h1>{html.escape(title)}</h1><p class='query'>{html.escape(command)}</p>{items}</body></html>")


def build_task(defn: intent.IntentDef, score: intent.IntentScore, command: str, memory: MemoryStore,
               task_id: str, arrival_s: float, k: int) -> Task:
    slots = defn.extract_slots(command)
    payload = _fill(dict(defn.payload), slots)
    params = payload.pop("task", {}) if isinstance(payload.get("task"), dict) else {}
    if payload.pop("rag", False):
        hits = memory.query(command, k)
        docs = [memory.get(h.doc_id) for h in hits]
        payload["doc_ids"] = [d.doc_id for d in docs]
        payload["doc_id"] = docs[0].doc_id if docs else None
        payload["html"] = _rag_html(payload.get("title", defn.intent_id), command, docs)
    payload["intent_id"] = defn.intent_id
    payload["confidence"] = score.c_intent
    return Task(
        task_id=task_id,
        task_type=defn.task_type,
        utility=float(params.get("utility", 1.0)),
        decay=float(params.get("decay", 1.0)),
        alpha=float(params.get("alpha", 0.05)),
        arrival_s=arrival_s,
        resources=dict(params.get("resources", {})),
        payload=payload,
        group=defn.group,
        duration_s=float(params.get("duration_s", 0.0)),
    )


def run(scenario: Scenario, data_dir: str | Path | None = None, seed: int | None = None) -> RunReport:
    seed = scenario.seed if seed is None else seed
    report = RunReport(scenario.name, seed)
    own_tmp = data_dir is None
    data_dir = Path(tempfile.mkdtemp(prefix="glasspipe-")) if own_tmp else Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for sub in ("bus", "effects"):
        # per-run state; a rerun must not see the previous run's log
        shutil.rmtree(data_dir / sub, ignore_errors=True)
    decisions = report.decisions
    counters = report.counters
    clock = VirtualClock()
    try:
        broker = Broker(data_dir / "bus", clock=clock)
        with _Stage(report, "setup", timed=False):
            intents = intent.load_registry(scenario.intent_registry_path)
            memory = MemoryStore()
            for d in scenario.memory_seed:
                memory.add(d["doc_id"], d["text"])
            weights = intent.FusionWeights(*scenario.fusion_weights) if scenario.fusion_weights else intent.FusionWeights()
            engine = intent.IntentEngine(intents, weights, memory, k=scenario.retrieval_k, cutoff=scenario.cutoff)
            executor = StubExecutor(data_dir / "effects")
            service = SchedulerService(broker, Scheduler(ResourcePool(scenario.capacity)), executor,
                                       group=scenario.group)

        commands: list[str] = []
        with _Stage(report, "segmentation"):
            if scenario.audio_path is not None:
                stream = audio.load_audio(scenario.audio_path)
                cfg = audio.SegmenterConfig(**scenario.segmenter)
                speech = [d.window_index for _, d in audio.segment(stream, cfg) if d.is_speech]
                counters["speech_windows"] = len(speech)
                decisions.append({"stage": "vad", "speech_windows": speech})
                # transcript stub: a labeled clip maps to its label when it contains speech
                if speech and scenario.transcript:
                    commands.append(scenario.transcript)
            elif scenario.transcript:
                commands.append(scenario.transcript)

        envelopes = []
        with _Stage(report, "classify"):
            for i, command in enumerate(commands):
                ranked = engine.classify(command)
                decisions.append({"stage": "classify", "command": command,
                                  "ranking": [s.to_json() for s in ranked]})
                top = ranked[0]
                if top.c_intent < engine.cutoff:
                    decisions.append({"stage": "no_intent", "command": command, "best": top.intent_id})
                    continue
                defn = next(d for d in intents if d.intent_id == top.intent_id)
                task = build_task(defn, top, command, memory, f"{scenario.name}-{i}", clock(),
                                  scenario.retrieval_k)
                envelopes.append(Envelope(
                    topic=f"task.submit.{task.group}", payload=task.to_json(), command_type=task.task_type,
                    group=task.group, msg_id=f"submit:{task.task_id}", priority_hint=top.c_intent,
                    ts_us=int(clock() * 1e6) + 1,
                ))

        if scenario.link_trace_path is not None:
            with _Stage(report, "netpath", timed=False):
                sessions = netpath.load_trace(scenario.link_trace_path, seed=seed)
                ticks = list(netpath.score_sessions(sessions))
                decisions.append({"stage": "netpath", "ticks": ticks})
                link = sessions[ticks[0]["method"]]
        else:
            link = None

        with _Stage(report, "publish_to_dispatch"):
            channel = LossyChannel(broker, link, clock) if link is not None else None
            for env in envelopes:
                receipt = channel.publish(env) if channel else broker.publish(env)
                decisions.append({"stage": "publish", "msg_id": receipt.msg_id, "topic": receipt.topic,
                                  "seq": receipt.seq})
            service.intake(clock())
            dispatched = service.dispatch(clock())

        with _Stage(report, "dispatch_to_effect"):
            service.start(dispatched, clock())
            service.run_until_idle(clock)

        for d in service.scheduler.decisions:
            decisions.append({"stage": "schedule", **d.to_json()})
        report.effects = [e.to_json() for e in executor.effects]

        if scenario.gaze_script:
            with _Stage(report, "gaze", timed=False):
                g = scenario.gaze_script
                gs = gaze.GazeStream(
                    gaze.synthetic_gaze(float(g.get("duration_s", 1.0)), seed=seed),
                    BusConnection(broker), device_id=g.get("device_id", "glasses0"),
                )
                gs.run()
                payloads = [e.payload for e in broker.replay(gs.topic)]
                digest = hashlib.sha256(json.dumps(payloads, separators=(",", ":")).encode()).hexdigest()
                decisions.append({"stage": "gaze", "messages": len(payloads), "sha256": digest})
                counters["gaze_messages"] = len(payloads)

        done = [e.payload for e in broker.replay(f"task.done.{scenario.group}")]
        counters.update({
            "submitted": service.counters["submitted"],
            "completed": service.counters["completed"],
            "rejected": service.counters["rejected"],
            "done_messages": len(done),
            "bus_duplicates_published": broker.stats["duplicates_published"],
            "bus_redelivered": broker.stats["redelivered"],
        })
        if channel is not None:
            counters.update({f"link_{k}": v for k, v in channel.counters.items()})
        broker.close()
    except Exception as exc:  # noqa: BLE001 - any stage failure becomes a failed report
        if report.failure_stage is None:
            report.status = "failed"
            report.failure_stage = "pipeline"
            report.error = f"{type(exc).__name__}: {exc}"
    with open(data_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1, sort_keys=True)
    if own_tmp:
        shutil.rmtree(data_dir, ignore_errors=True)
    return report


@dataclass
class CheckResult:
    passed: bool
    missing: list = field(default_factory=list)
    unexpected: list = field(default_factory=list)
    compute_ms: float = 0.0
    budget_ms: float = BUDGET_MS
    messages: list = field(default_factory=list)


def _flatten(effect: dict) -> dict:
    return {"effect_type": effect["effect_type"], **effect.get("details", {})}


def report_check(report: RunReport, scenario: Scenario, budget_ms: float = BUDGET_MS) -> CheckResult:
    """Order-insensitive effect match plus the compute-latency budget.

    Each expected entry names ``effect_type`` and any detail fields that must
    be equal; every actual effect must be claimed by exactly one expectation.
    """
    actual = [_flatten(e) for e in report.effects]
    unclaimed = list(range(len(actual)))
    missing = []
    for exp in scenario.expected_effects:
        hit = next((i for i in unclaimed if all(actual[i].get(k) == v for k, v in exp.items())), None)
        if hit is None:
            missing.append(exp)
        else:
            unclaimed.remove(hit)
    unexpected = [actual[i] for i in unclaimed]
    res = CheckResult(not missing and not unexpected, missing, unexpected, report.compute_ms, budget_ms)
    if report.status != "ok":
        res.passed = False
        res.messages.append(f"run failed at {report.failure_stage}: {report.error}")
    if res.compute_ms > budget_ms:
        res.passed = False
        res.messages.append(f"compute latency {res.compute_ms:.1f} ms exceeds {budget_ms} ms")
    for m in missing:
        res.messages.append(f"missing effect {m}")
    for u in unexpected:
        res.messages.append(f"unexpected effect {u}")
    return res
