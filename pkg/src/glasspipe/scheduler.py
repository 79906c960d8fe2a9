"""Priority task dispatch with resource gating, stub executors and bus intake.

Priority is ``U * exp(-alpha * wait) / D``, recomputed for every pending
task at each step. With alpha > 0 a task's priority falls the longer it
waits, so old low-value tasks sink rather than rise. ``aging=True`` flips
the exponent's sign (capped at ``aging_cap``) for experiments; it is never
the default.

By default the scheduler blocks at the head of the line: if the top task
does not fit the free resources, nothing is dispatched. ``backfill=True``
instead dispatches the highest-priority task that does fit.
"""
from __future__ import annotations

import heapq
import html
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .bus import Broker, Envelope

log = logging.getLogger(__name__)

TASK_TYPES = ("open_url", "launch_app", "file_op", "display_html")
DEFAULT_UTILITY = 1.0
DEFAULT_DECAY = 1.0
DEFAULT_ALPHA = 0.05


class TaskRejected(ValueError):
    def __init__(self, task_id: str, reason: str):
        super().__init__(f"task {task_id!r} rejected: {reason}")
        self.task_id = task_id
        self.reason = reason


@dataclass(frozen=True)
class Task:
    task_id: str
    task_type: str
    utility: float = DEFAULT_UTILITY
    decay: float = DEFAULT_DECAY
    alpha: float = DEFAULT_ALPHA
    arrival_s: float = 0.0
    resources: Mapping[str, float] = field(default_factory=dict)
    payload: Mapping = field(default_factory=dict)
    group: str = "glasses"
    duration_s: float = 0.0

    def __post_init__(self):
        if self.utility <= 0 or self.decay <= 0:
            raise ValueError(f"task {self.task_id!r}: utility and decay must be positive")
        if self.alpha < 0:
            raise ValueError(f"task {self.task_id!r}: alpha must be non-negative")
        if any(v < 0 for v in self.resources.values()):
            raise ValueError(f"task {self.task_id!r}: resource requests must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["resources"] = dict(self.resources)
        d["payload"] = dict(self.payload)
        return d

    @classmethod
    def from_json(cls, rec: Mapping) -> "Task":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in rec.items() if k in names})


def priority(task: Task, t_current: float, *, aging: bool = False, aging_cap: float = 10.0) -> float:
    wait = t_current - task.arrival_s
    if wait < 0:
        log.warning("clock skew: t=%s precedes arrival %s of %s", t_current, task.arrival_s, task.task_id)
        wait = 0.0
    if aging:
        factor = min(math.exp(task.alpha * wait), aging_cap)
    else:
        factor = math.exp(-task.alpha * wait)
    return task.utility * factor / task.decay


class ResourcePool:
    def __init__(self, capacity: Mapping[str, float]):
        if any(v < 0 for v in capacity.values()):
            raise ValueError("capacities must be non-negative")
        self.capacity = dict(capacity)
        self.allocated = {r: 0.0 for r in capacity}

    def available(self, name: str) -> float:
        return self.capacity.get(name, 0.0) - self.allocated.get(name, 0.0)

    def fits(self, request: Mapping[str, float]) -> bool:
        return all(v <= self.available(r) for r, v in request.items())

    def exceeds_capacity(self, request: Mapping[str, float]) -> list[str]:
        return [r for r, v in request.items() if v > self.capacity.get(r, 0.0)]

    def allocate(self, request: Mapping[str, float]) -> None:
        if not self.fits(request):
            raise ValueError(f"request {dict(request)} does not fit {self.free()}")
        for r, v in request.items():
            self.allocated[r] = self.allocated.get(r, 0.0) + v
        self.check()

    def release(self, request: Mapping[str, float]) -> None:
        for r, v in request.items():
            # clamp float dust from repeated add/subtract
            self.allocated[r] = max(0.0, self.allocated.get(r, 0.0) - v)
        self.check()

    def free(self) -> dict[str, float]:
        return {r: self.available(r) for r in self.capacity}

    def check(self) -> None:
        for r, cap in self.capacity.items():
            a = self.allocated.get(r, 0.0)
            if not -1e-9 <= a <= cap + 1e-9:
                raise AssertionError(f"resource {r!r} allocated {a} outside [0, {cap}]")

    @classmethod
    def parse(cls, text: str) -> "ResourcePool":
        """Build from ``"cpu=4,display=1"``."""
        cap = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            name, _, value = part.partition("=")
            if not value:
                raise ValueError(f"bad capacity entry {part!r}")
            cap[name.strip()] = float(value)
        return cls(cap)


@dataclass(frozen=True)
class Decision:
    action: str  # dispatch | wait | idle
    t: float
    task_id: str | None = None
    priority: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


class Scheduler:
    def __init__(self, pool: ResourcePool, *, backfill: bool = False, aging: bool = False,
                 aging_cap: float = 10.0):
        self.pool = pool
        self.backfill = backfill
        self.aging = aging
        self.aging_cap = aging_cap
        self.queue: dict[str, Task] = {}
        self.running: dict[str, Task] = {}
        self.rejected: dict[str, str] = {}
        self.skew_warnings = 0
        self.decisions: list[Decision] = []

    def submit(self, task: Task) -> None:
        if task.task_id in self.queue or task.task_id in self.running:
            raise TaskRejected(task.task_id, "duplicate task_id")
        over = self.pool.exceeds_capacity(task.resources)
        if over:
            reason = f"requests more than total capacity of {', '.join(sorted(over))}"
            self.rejected[task.task_id] = reason
            raise TaskRejected(task.task_id, reason)
        self.queue[task.task_id] = task

    def ranked(self, t_current: float) -> list[tuple[float, Task]]:
        scored = []
        for task in self.queue.values():
            if t_current < task.arrival_s:
                self.skew_warnings += 1
            scored.append((priority(task, t_current, aging=self.aging, aging_cap=self.aging_cap), task))
        scored.sort(key=lambda pt: (-pt[0], pt[1].arrival_s, pt[1].task_id))
        return scored

    def step(self, t_current: float) -> Decision:
        """One pass of the dispatch loop: pick, check resources, dispatch or wait."""
        if not self.queue:
            d = Decision("idle", t_current)
        else:
            ranked = self.ranked(t_current)
            candidates = ranked if self.backfill else ranked[:1]
            d = Decision("wait", t_current, ranked[0][1].task_id, ranked[0][0])
            for prio, task in candidates:
                if self.pool.fits(task.resources):
                    self.pool.allocate(task.resources)
                    del self.queue[task.task_id]
                    self.running[task.task_id] = task
                    d = Decision("dispatch", t_current, task.task_id, prio)
                    break
        self.decisions.append(d)
        return d

    def dispatch_ready(self, t_current: float) -> list[Task]:
        """Step until the scheduler waits or idles; returns the dispatched tasks."""
        out = []
        while (d := self.step(t_current)).action == "dispatch":
            out.append(self.running[d.task_id])
        return out

    def complete(self, task_id: str) -> Task:
        task = self.running.pop(task_id)
        self.pool.release(task.resources)
        return task


@dataclass(frozen=True)
class Effect:
    task_id: str
    effect_type: str
    details: Mapping
    completed_s: float

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "effect_type": self.effect_type,
                "details": dict(self.details), "completed_s": self.completed_s}


_SAFE = re.compile(r"[^A-Za-z0-9_.-]")


class StubExecutor:
    """Records what each task would have done instead of touching the OS.

    ``display_html`` is the one handler with a side effect: it writes the
    HTML page under ``<effects_dir>/html``.
    """

    def __init__(self, effects_dir: str | Path | None = None, platform: str = "linux"):
        self.effects_dir = Path(effects_dir) if effects_dir is not None else None
        self.platform = platform
        self.effects: list[Effect] = []
        self.handlers: dict[str, Callable[[Task], dict]] = {
            "open_url": self._open_url,
            "launch_app": self._launch_app,
            "file_op": self._file_op,
            "display_html": self._display_html,
        }
        if self.effects_dir is not None:
            self.effects_dir.mkdir(parents=True, exist_ok=True)

    def _open_url(self, task):
        return {"url": task.payload["url"], "platform": self.platform}

    def _launch_app(self, task):
        return {"app": task.payload["app"], "args": list(task.payload.get("args", [])),
                "platform": self.platform}

    def _file_op(self, task):
        return {"op": task.payload["op"], "path": task.payload["path"]}

    def _display_html(self, task):
        page = task.payload.get("html")
        if page is None:
            title = html.escape(str(task.payload.get("title", task.task_id)))
            body = html.escape(str(task.payload.get("body", "")))
            page = f"<html><head><title>{title}</title></head><body><h1>{title}</h1><p>{body}</p></body></html>"
        details = {k: v for k, v in task.payload.items() if k not in ("html", "body")}
        details["bytes"] = len(page.encode("utf-8"))
        if self.effects_dir is not None:
            out = self.effects_dir / "html" / f"{_SAFE.sub('_', task.task_id)}.html"
            out.parent.mkdir(exist_ok=True)
            out.write_text(page, encoding="utf-8")
            details["path"] = out.relative_to(self.effects_dir).as_posix()
        return details

    def execute(self, task: Task, t: float) -> Effect:
        handler = self.handlers.get(task.task_type)
        if handler is None:
            effect = Effect(task.task_id, "failure", {"error": f"unknown task_type {task.task_type!r}"}, t)
        else:
            try:
                effect = Effect(task.task_id, task.task_type, handler(task), t)
            except KeyError as exc:
                effect = Effect(task.task_id, "failure", {"error": f"missing payload field {exc}"}, t)
        self.effects.append(effect)
        if self.effects_dir is not None:
            path = self.effects_dir / f"{_SAFE.sub('_', task.task_id)}.json"
            path.write_text(json.dumps(effect.to_json(), sort_keys=True, indent=1), encoding="utf-8")
        return effect


class SchedulerService:
    """Bus-facing scheduler loop.

    Reads Task JSON from ``task.submit.<group>``, dispatches under the
    scheduler's rules, executes through the stub executor and publishes a
    completion on ``task.done.<group>``. Resources stay allocated for the
    task's ``duration_s`` of virtual time.
    """

    def __init__(self, broker: Broker, scheduler: Scheduler, executor: StubExecutor,
                 group: str = "*", name: str = "scheduler"):
        self.broker = broker
        self.scheduler = scheduler
        self.executor = executor
        self.intake_sub = broker.subscribe(f"task.submit.{group}", name=name)
        self._finishing: list[tuple[float, str]] = []
        self.done: list[dict] = []
        self.effects: dict[str, Effect] = {}
        self.counters = {"submitted": 0, "rejected": 0, "completed": 0, "malformed": 0}

    def _publish_done(self, task_id: str, group: str, status: str, t: float, extra: dict) -> None:
        body = {"task_id": task_id, "status": status, "t": t, **extra}
        self.done.append(body)
        self.broker.publish(Envelope(
            topic=f"task.done.{group}", payload=body, command_type="task_done",
            group=group, msg_id=f"done:{task_id}", ts_us=int(t * 1e6) or 1,
        ))

    def intake(self, t: float) -> int:
        """Move submitted tasks from the bus into the queue; returns how many were read."""
        n = 0
        for d in self.intake_sub:
            n += 1
            try:
                task = Task.from_json(d.envelope.payload)
            except (TypeError, ValueError) as exc:
                log.warning("malformed task on %s: %s", d.envelope.topic, exc)
                self.counters["malformed"] += 1
                self.intake_sub.ack(d.msg_id)
                continue
            known = (task.task_id in self.scheduler.queue or task.task_id in self.scheduler.running
                     or task.task_id in self.effects or task.task_id in self.scheduler.rejected)
            if d.redelivered and known:
                self.intake_sub.ack(d.msg_id)
                continue
            self.counters["submitted"] += 1
            try:
                self.scheduler.submit(task)
            except TaskRejected as exc:
                self.counters["rejected"] += 1
                self._publish_done(task.task_id, task.group, "rejected", t, {"reason": exc.reason})
            self.intake_sub.ack(d.msg_id)
        return n

    def dispatch(self, t: float) -> list[Task]:
        return self.scheduler.dispatch_ready(t)

    def start(self, tasks: Iterable[Task], t: float) -> list[Effect]:
        """Execute dispatched tasks; resources are held until ``t + duration_s``."""
        produced = []
        for task in tasks:
            effect = self.executor.execute(task, t + task.duration_s)
            self.effects[task.task_id] = effect
            produced.append(effect)
            heapq.heappush(self._finishing, (t + task.duration_s, task.task_id))
        return produced

    def retire(self, t: float) -> None:
        while self._finishing and self._finishing[0][0] <= t:
            finish, task_id = heapq.heappop(self._finishing)
            task = self.scheduler.complete(task_id)
            effect = self.effects[task_id]
            self.counters["completed"] += 1
            status = "failed" if effect.effect_type == "failure" else "ok"
            self._publish_done(task_id, task.group, status, finish, {"effect": effect.to_json()})

    def poll(self, t: float) -> list[Effect]:
        """Advance the service to virtual time ``t``; returns effects produced."""
        self.retire(t)
        self.intake(t)
        produced = []
        while tasks := self.dispatch(t):
            produced += self.start(tasks, t)
            # zero-duration tasks free their resources immediately
            self.retire(t)
        return produced

    def next_event(self) -> float | None:
        return self._finishing[0][0] if self._finishing else None

    def run_until_idle(self, clock) -> None:
        """Poll, jumping the virtual clock to each completion, until nothing is running."""
        self.poll(clock())
        while (nxt := self.next_event()) is not None:
            clock.now = max(clock.now, nxt)
            self.poll(clock())

    def idle(self) -> bool:
        return not self._finishing and not self.scheduler.queue and self.broker.backlog(self.intake_sub.name) == 0


@dataclass
class SimulationResult:
    dispatch_order: list[str]
    decisions: list[Decision]
    effects: list[Effect]
    rejected: dict[str, str]
    makespan: float
    invariant_checks: int


def simulate(
    tasks: Iterable[Task],
    capacity: Mapping[str, float],
    *,
    backfill: bool = False,
    aging: bool = False,
    executor: StubExecutor | None = None,
    on_event: Callable[[float, Scheduler], None] | None = None,
) -> SimulationResult:
    """Discrete-event run on a virtual clock: events are arrivals and completions.

    The pool invariant is checked after every event; ``on_event`` sees the
    scheduler state at each one.
    """
    sched = Scheduler(ResourcePool(capacity), backfill=backfill, aging=aging)
    executor = executor or StubExecutor()
    arrivals = sorted(tasks, key=lambda x: (x.arrival_s, x.task_id))
    finishing: list[tuple[float, str]] = []
    order: list[str] = []
    checks = 0
    i = 0
    t = 0.0
    while i < len(arrivals) or finishing or sched.queue:
        next_arrival = arrivals[i].arrival_s if i < len(arrivals) else math.inf
        next_finish = finishing[0][0] if finishing else math.inf
        t = min(next_arrival, next_finish)
        if t == math.inf:
            # queue holds tasks that can never fit; submit-time checks prevent this
            raise RuntimeError("scheduler deadlocked with pending tasks")
        while finishing and finishing[0][0] <= t:
            _, tid = heapq.heappop(finishing)
            sched.complete(tid)
        while i < len(arrivals) and arrivals[i].arrival_s <= t:
            try:
                sched.submit(arrivals[i])
            except TaskRejected:
                pass
            i += 1
        for task in sched.dispatch_ready(t):
            order.append(task.task_id)
            executor.execute(task, t + task.duration_s)
            heapq.heappush(finishing, (t + task.duration_s, task.task_id))
        sched.pool.check()
        checks += 1
        if on_event is not None:
            on_event(t, sched)
    return SimulationResult(order, sched.decisions, executor.effects, sched.rejected, t, checks)
