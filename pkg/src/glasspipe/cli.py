"""``glasspipe`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import audio, harness, intent, netpath
from .memory import MemoryStore
from .scheduler import ResourcePool, StubExecutor, Task, simulate

DEFAULT_REGISTRY = Path(__file__).parent / "scenarios" / "intents.json"


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False) + "\n")


def cmd_run(args) -> int:
    sc = harness.Scenario.load(args.scenario)
    report = harness.run(sc, data_dir=args.data_dir, seed=args.seed)
    if args.json:
        json.dump(report.to_json(), sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    else:
        print(f"{report.scenario}: {report.status}, {len(report.effects)} effect(s), "
              f"compute {report.compute_ms:.2f} ms")
        if report.status != "ok":
            print(f"failed at {report.failure_stage}: {report.error}", file=sys.stderr)
    if args.command == "verify":
        check = harness.report_check(report, sc)
        for m in check.messages:
            print(m, file=sys.stderr)
        print("PASS" if check.passed else "FAIL")
        return 0 if check.passed else 1
    return 0 if report.status == "ok" else 1


def cmd_segment(args) -> int:
    stream = audio.load_audio(args.audio, args.rate)
    cfg = audio.SegmenterConfig(args.window, args.hop, args.energy_threshold, args.zcr_threshold)
    audio.write_ndjson(stream, cfg, sys.stdout)
    return 0


def cmd_classify(args) -> int:
    intents = intent.load_registry(args.registry)
    history = MemoryStore.load(args.memory) if args.memory else None
    weights = intent.FusionWeights(*args.weights) if args.weights else intent.FusionWeights()
    ranked = intent.classify(args.text, intents, weights, history, k=args.k)
    json.dump([s.to_json() for s in ranked], sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def cmd_memory(args) -> int:
    corpus = Path(args.corpus)
    if args.action == "add":
        store = MemoryStore.load(corpus, attach=True) if corpus.exists() else MemoryStore(path=corpus)
        doc = store.add(args.id, args.text)
        _emit({"doc_id": doc.doc_id, "timestamp": doc.timestamp})
        return 0
    store = MemoryStore.load(corpus)
    for r in store.query(args.text, args.k):
        _emit({"doc_id": r.doc_id, "similarity": r.similarity, "rank": r.rank})
    return 0


def cmd_netpath(args) -> int:
    sessions = netpath.load_trace(args.trace)
    weights = netpath.PathWeights(*args.weights, epsilon=args.epsilon) if args.weights else netpath.PathWeights(epsilon=args.epsilon)
    rate_cfg = None
    if args.r_max is not None:
        ref = next(iter(sessions.values())).reference_capacity
        rate_cfg = netpath.RateConfig(args.r_max, args.b_required or ref, args.lam)
    for rec in netpath.score_sessions(sessions, weights, rate_cfg, tick_s=args.tick):
        _emit(rec)
    return 0


def cmd_bus(args) -> int:
    from .bus import Broker
    from .bus.tcp import BusClient, BusServer

    if args.action == "serve":
        broker = Broker(args.data_dir, fsync=not args.no_fsync)
        server = BusServer(broker, args.host, args.port)
        print(f"listening on {args.host}:{server.port}", file=sys.stderr, flush=True)
        try:
            server.serve_forever(poll_interval=0.1)
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
            broker.close()
        return 0
    client = BusClient(args.host, args.port)
    sub = client.subscribe(args.pattern, durable=False)
    deadline = None if args.timeout is None else time.monotonic() + args.timeout
    try:
        while deadline is None or time.monotonic() < deadline:
            msg = sub.receive(timeout=0.2)
            if msg is None:
                continue
            _emit(msg)
            sub.ack(msg["msg_id"])
    except KeyboardInterrupt:
        pass
    finally:
        sub.close()
        client.close()
    return 0


def cmd_sched(args) -> int:
    source = open(args.tasks, encoding="utf-8") if args.tasks != "-" else sys.stdin
    with source:
        tasks = [Task.from_json(rec) for rec in json.load(source)]
    pool = ResourcePool.parse(args.capacity)
    result = simulate(tasks, pool.capacity, backfill=args.backfill, aging=args.aging,
                      executor=StubExecutor(args.effects_dir))
    for d in result.decisions:
        if d.action == "dispatch":
            _emit(d.to_json())
    for tid, reason in result.rejected.items():
        _emit({"action": "rejected", "task_id": tid, "reason": reason})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glasspipe", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("run", "verify"):
        s = sub.add_parser(name, help=f"{name} a scenario file or built-in scenario name")
        s.add_argument("scenario")
        s.add_argument("--data-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--json", action="store_true", help="print the full report as JSON")
        s.set_defaults(func=cmd_run)

    s = sub.add_parser("segment", help="window a WAV/raw PCM file and print VAD records")
    s.add_argument("--audio", required=True)
    s.add_argument("--rate", type=int, default=16000, help="sample rate for raw PCM input")
    s.add_argument("--window", type=float, default=1.0)
    s.add_argument("--hop", type=float, default=0.5)
    s.add_argument("--energy-threshold", type=float, default=2.0)
    s.add_argument("--zcr-threshold", type=float, default=0.35)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("classify", help="rank intents for a command")
    s.add_argument("--command", dest="text", required=True)
    s.add_argument("--registry", default=str(DEFAULT_REGISTRY))
    s.add_argument("--memory", help="JSONL corpus used as conversation history")
    s.add_argument("--weights", type=float, nargs=3, metavar=("WP", "WL", "WC"))
    s.add_argument("--k", type=int, default=3)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("memory", help="add to or query a JSONL corpus")
    s.add_argument("action", choices=("add", "query"))
    s.add_argument("--corpus", default="memory.jsonl")
    s.add_argument("--id")
    s.add_argument("--text", required=True)
    s.add_argument("--k", type=int, default=3)
    s.set_defaults(func=cmd_memory)

    s = sub.add_parser("netpath", help="score connection methods over a link trace")
    s.add_argument("action", choices=("score",))
    s.add_argument("--trace", required=True)
    s.add_argument("--tick", type=float, default=netpath.DEFAULT_TICK_S)
    s.add_argument("--weights", type=float, nargs=3, metavar=("W1", "W2", "W3"))
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("--r-max", type=float)
    s.add_argument("--b-required", type=float)
    s.add_argument("--lam", type=float, default=0.5)
    s.set_defaults(func=cmd_netpath)

    s = sub.add_parser("bus", help="run the TCP broker or tail a topic pattern")
    s.add_argument("action", choices=("serve", "tail"))
    s.add_argument("pattern", nargs="?", default="#")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=5672)
    s.add_argument("--data-dir", default="bus-data")
    s.add_argument("--no-fsync", action="store_true")
    s.add_argument("--timeout", type=float, help="stop tailing after this many seconds")
    s.set_defaults(func=cmd_bus)

    s = sub.add_parser("sched", help="simulate dispatch of a JSON task list")
    s.add_argument("action", choices=("run",))
    s.add_argument("--capacity", required=True, help="e.g. cpu=4,display=1")
    s.add_argument("--backfill", type=_bool, nargs="?", const=True, default=False)
    s.add_argument("--aging", type=_bool, nargs="?", const=True, default=False)
    s.add_argument("--tasks", default="-", help="JSON array of tasks (default: stdin)")
    s.add_argument("--effects-dir")
    s.set_defaults(func=cmd_sched)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "memory" and args.action == "add" and not args.id:
        print("memory add needs --id", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
