"""
Priority dispatch under resource limits
=======================================

Priority is U * exp(-alpha * wait) / D. With alpha > 0 a task's priority
falls as it waits, which is the opposite of aging, so a constant-priority
task can overtake two decaying ones.
"""

from glasspipe.scheduler import ResourcePool, Scheduler, Task, priority, simulate

tasks = [Task("1", "open_url", 10, 2, 0.1), Task("2", "open_url", 8, 1, 0.1), Task("3", "open_url", 4, 1, 0.0)]
for t in tasks:
    print(t.task_id, round(priority(t, 10.0), 4))

s = Scheduler(ResourcePool({"cpu": 4}))
for t in tasks:
    s.submit(t)
print("dispatch order at t=10:", [t.task_id for t in s.dispatch_ready(10.0)])

###############################################################################
# Head-of-line blocking versus backfill: a big task waits for a hog to
# finish; with backfill the small tasks slip in around it.

mix = [Task("hog", "launch_app", 1, 1, 0, 0.0, {"cpu": 3}, {"app": "cad"}, duration_s=5),
       Task("big", "launch_app", 9, 1, 0, 0.1, {"cpu": 2}, {"app": "sim"}, duration_s=1)]
mix += [Task(f"s{i}", "open_url", 1, 1, 0, 0.2, {"cpu": 1}, {"url": "https://example.org"}, duration_s=1)
        for i in range(3)]
for backfill in (False, True):
    r = simulate(mix, {"cpu": 4}, backfill=backfill)
    print(f"backfill={backfill}: {r.dispatch_order}  makespan={r.makespan}")
