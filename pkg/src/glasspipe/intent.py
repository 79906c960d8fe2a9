"""Intent scoring: substring pattern evidence, a pluggable language-model
scorer and conversation context, fused by a convex weighting."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .memory import MemoryStore, embed

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

DEFAULT_CUTOFF = 0.25


class IntentConfigError(ValueError):
    pass


def normalize_command(text: str) -> str:
    return " ".join(text.lower().split())


def tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class IntentDef:
    intent_id: str
    patterns: tuple[str, ...]
    task_type: str
    group: str = "glasses"
    # extra keys carried into the task payload; {slot} references fill from ``slots``
    payload: dict = field(default_factory=dict, compare=False)
    slots: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pats = tuple(normalize_command(p) for p in self.patterns)
        if not pats or any(not p for p in pats):
            raise IntentConfigError(f"intent {self.intent_id!r} needs non-empty patterns")
        object.__setattr__(self, "patterns", pats)

    @property
    def vocabulary(self) -> set[str]:
        vocab: set[str] = set()
        for p in self.patterns:
            vocab |= tokens(p)
        return vocab

    def extract_slots(self, command: str) -> dict[str, str]:
        found = {}
        for name, regex in self.slots.items():
            m = re.search(regex, command, flags=re.IGNORECASE)
            if m:
                found[name] = (m.group(1) if m.groups() else m.group(0)).strip()
        return found

    @classmethod
    def from_json(cls, rec: dict) -> "IntentDef":
        return cls(
            intent_id=rec["intent_id"],
            patterns=tuple(rec["patterns"]),
            task_type=rec["task_type"],
            group=rec.get("group", "glasses"),
            payload=rec.get("payload", {}),
            slots=rec.get("slots", {}),
        )


def load_registry(path: str | Path) -> list[IntentDef]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise IntentConfigError(f"{path}: registry must be a JSON array")
    return [IntentDef.from_json(rec) for rec in data]


@dataclass(frozen=True)
class FusionWeights:
    w_pattern: float = 0.5
    w_llm: float = 0.3
    w_context: float = 0.2

    def __post_init__(self):
        ws = (self.w_pattern, self.w_llm, self.w_context)
        if any(not 0 <= w <= 1 for w in ws):
            raise IntentConfigError(f"weights must lie in [0, 1]: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise IntentConfigError(f"weights must sum to 1, got {sum(ws)!r}")


@dataclass(frozen=True)
class IntentScore:
    intent_id: str
    c_intent: float
    p_s: float
    l_s: float
    c_context: float

    def to_json(self) -> dict:
        return {
            "intent_id": self.intent_id,
            "c_intent": self.c_intent,
            "p_s": self.p_s,
            "l_s": self.l_s,
            "c_context": self.c_context,
        }


def longest_common_substring(a: str, b: str) -> int:
    """Length of the longest contiguous run shared by ``a`` and ``b``."""
    if not a or not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def pattern_score(command: str, intent: IntentDef) -> float:
    command = normalize_command(command)
    if not command:
        return 0.0
    return max(longest_common_substring(command, p) / len(p) for p in intent.patterns)


# A scorer maps (normalized command, intent) to a score in [0, 1].
LlmScorer = Callable[[str, IntentDef], float]


def jaccard_scorer(command: str, intent: IntentDef) -> float:
    """Token-set Jaccard overlap between the command and the intent's pattern vocabulary."""
    a = tokens(command)
    b = intent.vocabulary
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def llm_score(command: str, intent: IntentDef, scorer: LlmScorer | None = jaccard_scorer) -> float:
    if scorer is None:
        raise IntentConfigError("no language-model scorer registered")
    s = float(scorer(normalize_command(command), intent))
    return min(1.0, max(0.0, s))


def contextual_relevance(command: str, history: MemoryStore | None, k: int = 3) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if history is None or len(history) == 0:
        return 0.0
    results = history.top_k(embed(command, history.dim), k)
    if not results:
        return 0.0
    return min(1.0, max(0.0, max(r.similarity for r in results)))


def fuse(p_s: float, l_s: float, c_context: float, weights: FusionWeights) -> float:
    return weights.w_pattern * p_s + weights.w_llm * l_s + weights.w_context * c_context


def classify(
    command: str,
    intents: Sequence[IntentDef],
    weights: FusionWeights = FusionWeights(),
    history: MemoryStore | None = None,
    *,
    scorer: LlmScorer | None = jaccard_scorer,
    k: int = 3,
) -> list[IntentScore]:
    """Score every intent and rank by fused confidence, ties by intent_id."""
    if not intents:
        raise IntentConfigError("intent registry is empty")
    # context depends only on the command, not on the intent
    ctx = contextual_relevance(command, history, k)
    scores = []
    for intent in intents:
        p = pattern_score(command, intent)
        l = llm_score(command, intent, scorer)
        scores.append(IntentScore(intent.intent_id, fuse(p, l, ctx, weights), p, l, ctx))
    scores.sort(key=lambda s: (-s.c_intent, s.intent_id))
    return scores


@dataclass
class IntentEngine:
    intents: list[IntentDef]
    weights: FusionWeights = field(default_factory=FusionWeights)
    history: MemoryStore | None = None
    scorer: LlmScorer | None = jaccard_scorer
    k: int = 3
    cutoff: float = DEFAULT_CUTOFF

    def classify(self, command: str) -> list[IntentScore]:
        return classify(command, self.intents, self.weights, self.history, scorer=self.scorer, k=self.k)

    def best(self, command: str) -> tuple[IntentDef, IntentScore] | None:
        """Top-ranked intent, or None when its confidence is below ``cutoff``."""
        ranked = self.classify(command)
        top = ranked[0]
        if top.c_intent < self.cutoff:
            return None
        by_id = {i.intent_id: i for i in self.intents}
        return by_id[top.intent_id], top
