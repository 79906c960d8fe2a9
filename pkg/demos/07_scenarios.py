"""
End-to-end scenarios
====================

Each scenario runs audio through segmentation, classifies the command,
publishes a task over the bus, dispatches it and records the effect. The
check compares effects and the compute budget.
"""

from glasspipe import harness

for name in harness.builtin_scenarios():
    sc = harness.Scenario.load(name)
    rep = harness.run(sc)
    check = harness.report_check(rep, sc)
    print(f"{name:13s} {'PASS' if check.passed else 'FAIL'}  compute {rep.compute_ms:6.2f} ms")
    for e in rep.effects:
        d = e["details"]
        print("   ", e["effect_type"], d.get("url") or d.get("doc_id"))
    for stage, us in rep.latencies_us.items():
        print(f"    {stage:20s} {us / 1000:7.3f} ms")
