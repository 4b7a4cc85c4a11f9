"""In-process publish-subscribe bus with hierarchical topics.

Topics are slash-separated paths ("/flux/skills/o2/std").  Subscriptions
use patterns where '*' matches exactly one segment and a trailing '**'
matches one or more remaining segments.  A small parameter store keeps
per-twin configuration such as the synchronization topic lists.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable


class TopicError(Exception):
    pass


class MalformedPattern(TopicError):
    pass


class UnresolvedRelativeTopic(TopicError):
    pass


class AlreadyAbsolute(TopicError):
    pass


@dataclass(frozen=True)
class TopicPath:
    """Canonical topic path; absolute paths carry a leading '/'."""

    segments: tuple[str, ...]
    absolute: bool = True

    @classmethod
    def parse(cls, text: str) -> "TopicPath":
        absolute = text.startswith("/")
        segments = tuple(s for s in text.split("/") if s)
        if not segments:
            raise TopicError(f"empty topic path {text!r}")
        for seg in segments:
            if seg in ("*", "**"):
                raise TopicError(f"wildcard {seg!r} not allowed in a plain topic path")
        return cls(segments, absolute)

    def child(self, *extra: str) -> "TopicPath":
        return TopicPath(self.segments + extra, self.absolute)

    def __str__(self) -> str:
        body = "/".join(self.segments)
        return ("/" + body) if self.absolute else body


@dataclass(frozen=True)
class TopicPattern:
    """Topic pattern; '*' = one segment, trailing '**' = one or more."""

    segments: tuple[str, ...]
    absolute: bool = True

    def __post_init__(self):
        if not self.segments:
            raise MalformedPattern("empty pattern")
        for i, seg in enumerate(self.segments):
            if not seg:
                raise MalformedPattern("empty segment in pattern")
            if seg == "**" and i != len(self.segments) - 1:
                raise MalformedPattern("'**' may only appear as the final segment")

    @classmethod
    def parse(cls, text: str) -> "TopicPattern":
        absolute = text.startswith("/")
        segments = tuple(s for s in text.split("/") if s)
        return cls(segments, absolute)

    def __str__(self) -> str:
        body = "/".join(self.segments)
        return ("/" + body) if self.absolute else body


def match_pattern(pattern: TopicPattern, topic: TopicPath) -> bool:
    """True iff the pattern's segments align with the absolute topic."""
    if not topic.absolute:
        raise UnresolvedRelativeTopic(f"topic {topic} must be absolute for matching")
    pseg, tseg = pattern.segments, topic.segments
    if pseg[-1] == "**":
        prefix = pseg[:-1]
        if len(tseg) < len(prefix) + 1:  # '**' needs at least one remaining segment
            return False
        return all(p == "*" or p == t for p, t in zip(prefix, tseg))
    if len(pseg) != len(tseg):
        return False
    return all(p == "*" or p == t for p, t in zip(pseg, tseg))


@dataclass(frozen=True)
class Skill:
    """A node grouping publishers/subscribers whose topics may be synchronized."""

    skill_id: int
    name: str
    namespace: TopicPath
    publishers: tuple[str, ...] = ()
    subscribers: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.namespace.absolute:
            raise TopicError(f"skill {self.name!r} namespace must be absolute")

    def resolve(self, topic: TopicPath | str) -> TopicPath:
        """Resolve a topic relative to this skill's namespace."""
        if isinstance(topic, str):
            topic = TopicPath.parse(topic)
        return resolve_relative(self, topic)

    def publisher_topics(self) -> list[TopicPath]:
        return [self.resolve(t) for t in self.publishers]

    def subscriber_topics(self) -> list[TopicPath]:
        return [self.resolve(t) for t in self.subscribers]


def resolve_relative(skill: Skill, topic: TopicPath) -> TopicPath:
    """Prefix a relative topic with the skill namespace."""
    if topic.absolute:
        raise AlreadyAbsolute(f"topic {topic} is already absolute")
    return TopicPath(skill.namespace.segments + topic.segments, absolute=True)


MessageCallback = Callable[[TopicPath, Any, "Skill | None"], None]


@dataclass
class Subscription:
    pattern: TopicPattern
    callback: MessageCallback
    subscriber: Skill | None
    active: bool = True

    def cancel(self) -> None:
        self.active = False


class MessageBus:
    """Single-process bus; publishes are serialized through one dispatch loop.

    Callbacks run on the publisher's context and must not block.  Nested
    publishes from inside a callback are queued, preserving global FIFO
    order (and therefore per-(publisher, topic) order).
    """

    def __init__(self):
        self._subs: list[Subscription] = []
        self._queue: deque = deque()
        self._dispatching = False

    def subscribe(
        self,
        pattern: TopicPattern | str,
        callback: MessageCallback,
        subscriber: Skill | None = None,
    ) -> Subscription:
        if isinstance(pattern, str):
            pattern = TopicPattern.parse(pattern)
        if not pattern.absolute:
            if subscriber is None:
                raise UnresolvedRelativeTopic(f"relative pattern {pattern} needs a skill")
            pattern = TopicPattern(subscriber.namespace.segments + pattern.segments, True)
        sub = Subscription(pattern, callback, subscriber)
        self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.cancel()
        if sub in self._subs:
            self._subs.remove(sub)

    def publish(self, topic: TopicPath | str, message: Any, publisher: Skill | None = None) -> int:
        if isinstance(topic, str):
            topic = TopicPath.parse(topic)
        if not topic.absolute:
            if publisher is None:
                raise UnresolvedRelativeTopic(f"relative topic {topic} needs a skill")
            topic = resolve_relative(publisher, topic)
        matched = [s for s in self._subs if s.active and match_pattern(s.pattern, topic)]
        self._queue.append((topic, message, publisher, matched))
        if not self._dispatching:
            self._dispatching = True
            try:
                while self._queue:
                    t, m, p, subs = self._queue.popleft()
                    for sub in subs:
                        if sub.active:
                            sub.callback(t, m, p)
            finally:
                self._dispatching = False
        return len(matched)


_ABSENT = object()


class ParameterStore:
    """Last-write-wins key/value store (the mission's parameter server)."""

    ABSENT = _ABSENT

    def __init__(self):
        self._params: dict[str, Any] = {}

    def set_param(self, name: str, value: Any) -> None:
        self._params[name] = value

    def get_param(self, name: str, default: Any = _ABSENT) -> Any:
        return self._params.get(name, default)

    def names(self) -> list[str]:
        return list(self._params)
