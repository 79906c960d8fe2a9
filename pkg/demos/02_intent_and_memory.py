"""
Ranking intents with conversation memory
========================================

Three signals decide what a spoken command means: substring overlap with
each intent's patterns, a token-overlap stand-in for a language model, and
how close the command sits to recent history in the memory store.
"""

from glasspipe import intent
from glasspipe.harness import SCENARIO_DIR
from glasspipe.memory import MemoryStore

intents = intent.load_registry(SCENARIO_DIR / "intents.json")

history = MemoryStore()
history.add("h1", "show me the way to the lab")
history.add("h2", "what is wrong with the robot arm")

command = "I want to go to NCHC"
for s in intent.classify(command, intents, history=history):
    print(f"{s.intent_id:18s} p={s.p_s:.2f} l={s.l_s:.2f} ctx={s.c_context:.2f}  -> {s.c_intent:.3f}")

# Slots come from the winning intent's regexes
nav = next(d for d in intents if d.intent_id == "navigate")
print(nav.extract_slots(command))

###############################################################################
# Retrieval on its own: character trigrams hashed into 256 buckets.

docs = MemoryStore()
docs.add("arm", "UR10 robot arm protective stop and joint fault recovery")
docs.add("food", "beef noodle soup and dumplings in the cafeteria")
docs.add("net", "use the corporate VPN outside the site network")
for r in docs.query("the robot arm has a malfunction", k=2):
    print(r.rank, r.doc_id, round(r.similarity, 3))
