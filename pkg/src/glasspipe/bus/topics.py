"""AMQP-style topic names and patterns.

Topics are dot-separated segments of ``[A-Za-z0-9_-]``. In patterns ``*``
matches exactly one segment and ``#`` matches zero or more.
"""
from __future__ import annotations

import re
from functools import lru_cache

_SEGMENT = re.compile(r"^[A-Za-z0-9_\-]+$")


class TopicError(ValueError):
    pass


def validate_topic(topic: str) -> str:
    if not isinstance(topic, str) or not topic:
        raise TopicError("topic must be a non-empty string")
    for seg in topic.split("."):
        if not _SEGMENT.match(seg):
            raise TopicError(f"malformed topic {topic!r}")
    return topic


def validate_pattern(pattern: str) -> str:
    if not isinstance(pattern, str) or not pattern:
        raise TopicError("pattern must be a non-empty string")
    for seg in pattern.split("."):
        if seg not in ("*", "#") and not _SEGMENT.match(seg):
            raise TopicError(f"malformed pattern {pattern!r}")
    return pattern


@lru_cache(maxsize=4096)
def topic_matches(pattern: str, topic: str) -> bool:
    return _match(tuple(pattern.split(".")), tuple(topic.split(".")))


def _match(pat: tuple[str, ...], segs: tuple[str, ...]) -> bool:
    if not pat:
        return not segs
    head, rest = pat[0], pat[1:]
    if head == "#":
        return any(_match(rest, segs[i:]) for i in range(len(segs) + 1))
    if not segs:
        return False
    if head == "*" or head == segs[0]:
        return _match(rest, segs[1:])
    return False
