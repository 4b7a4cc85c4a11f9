"""Shipboard hub: twin registry, PT<->DT router, mission log, replay.

The basestation owns the ship-side modem endpoint.  Everything it hears
is reassembled, decoded, logged, and republished on the registered
Digital Twin's bus; commands from Digital Twins go the other way, encoded
and fragmented onto the channel.  The log is JSON-lines, append-only,
with strictly non-decreasing virtual time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .bus import MessageBus, Skill, TopicPath, TopicPattern, match_pattern
from .channel import AcousticChannel, PlatformPosition, VirtualClock
from .codec import (
    CodecError,
    Direction,
    Envelope,
    Frame,
    FrameAssembler,
    SchemaRegistry,
    TooManyFragments,
    decode,
    encode,
    fragment,
)
from .messages import (
    MESSAGE_TYPES,
    PLATFORM_NAMES,
    SHIP,
    SHIP_ID,
    SKILL_BASESTATION,
    TYPE_NAMES,
    O2Event,
    StandardO2,
    StandardStatus,
    message_from_envelope,
    standard_registry,
)
from .twin import PlausibilityBounds, Twin, plausibility_check

ROUTER_SKILL = Skill(SKILL_BASESTATION, "twin-sync", TopicPath.parse("/basestation"))
SHIP_EVENT_TOPIC = "/basestation/events"


class BasestationError(Exception):
    pass


class UnknownPlatform(BasestationError):
    pass


class OversizedAfterFragmentation(BasestationError):
    pass


@dataclass
class LogRecord:
    """One routed (or dropped) message in the mission log."""

    t: float
    direction: str
    platform: str
    skill_id: int
    topic: str
    type_name: str
    payload: dict[str, Any]
    flags: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    drop_reason: str | None = None

    def to_json_obj(self) -> dict[str, Any]:
        obj = {
            "t": self.t,
            "direction": self.direction,
            "platform": self.platform,
            "skill_id": self.skill_id,
            "topic": self.topic,
            "type": self.type_name,
            "payload": self.payload,
            "flags": self.flags,
        }
        if self.extra:
            obj["extra"] = self.extra
        if self.drop_reason is not None:
            obj["drop_reason"] = self.drop_reason
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "LogRecord":
        return cls(
            t=float(obj["t"]),
            direction=obj["direction"],
            platform=obj["platform"],
            skill_id=int(obj["skill_id"]),
            topic=obj["topic"],
            type_name=obj["type"],
            payload=dict(obj["payload"]),
            flags=list(obj.get("flags", [])),
            extra=dict(obj.get("extra", {})),
            drop_reason=obj.get("drop_reason"),
        )

    @property
    def is_drop(self) -> bool:
        return self.drop_reason is not None


class MessageLog:
    """Append-only mission log with live subscribers."""

    def __init__(self):
        self.records: list[LogRecord] = []
        self._subscribers: list[Callable[[LogRecord], None]] = []

    def append(self, record: LogRecord) -> None:
        if self.records and record.t < self.records[-1].t:
            raise BasestationError(
                f"log time went backwards: {record.t} < {self.records[-1].t}"
            )
        self.records.append(record)
        for cb in self._subscribers:
            cb(record)

    def subscribe(self, cb: Callable[[LogRecord], None]) -> None:
        self._subscribers.append(cb)

    def unsubscribe(self, cb: Callable[[LogRecord], None]) -> None:
        if cb in self._subscribers:
            self._subscribers.remove(cb)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_json_obj(), sort_keys=True) + "\n")


def read_log(path: str | Path) -> tuple[list[LogRecord], int]:
    """Load a JSONL mission log; malformed lines are skipped and counted."""
    records: list[LogRecord] = []
    corrupt = 0
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            records.append(LogRecord.from_json_obj(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            corrupt += 1
    return records, corrupt


def replay(
    records: Iterable[LogRecord],
    pattern: str | TopicPattern | None = None,
    platform: str | None = None,
    t_start: float | None = None,
    t_end: float | None = None,
) -> Iterator[LogRecord]:
    """Iterate log records filtered by topic pattern, platform, time range."""
    if isinstance(pattern, str):
        pattern = TopicPattern.parse(pattern)
    for record in records:
        if platform is not None and record.platform != platform:
            continue
        if t_start is not None and record.t < t_start:
            continue
        if t_end is not None and record.t > t_end:
            continue
        if pattern is not None:
            if not record.topic:
                continue
            if not match_pattern(pattern, TopicPath.parse(record.topic)):
                continue
        yield record


def replay_into_bus(records: Iterable[LogRecord], bus: MessageBus) -> int:
    """Republish PT->DT records on a fresh bus, rebuilding DT-side state."""
    name_to_type = {name: tid for tid, name in TYPE_NAMES.items()}
    count = 0
    for record in records:
        if record.is_drop or record.direction != "PT_TO_DT":
            continue
        type_id = name_to_type.get(record.type_name)
        if type_id is None:
            continue
        message = MESSAGE_TYPES[type_id].from_payload(record.payload)
        bus.publish(TopicPath.parse(record.topic), message, ROUTER_SKILL)
        count += 1
    return count


@dataclass
class TwinEntry:
    """Registry slot for one platform's shipboard Digital Twin."""

    twin: Twin
    measurement_period: float
    last_heard: float | None = None
    last_o2: StandardO2 | None = None
    last_status: StandardStatus | None = None
    implausible_count: int = 0
    received: int = 0


class Basestation:
    """Routes messages between Physical Twins and their Digital Twins."""

    def __init__(
        self,
        channel: AcousticChannel,
        clock: VirtualClock,
        registry: SchemaRegistry | None = None,
        bounds: PlausibilityBounds | None = None,
        allowed_events: tuple[str, ...] = ("Oxia", "Hypoxia"),
        position: PlatformPosition | None = None,
    ):
        self.channel = channel
        self.clock = clock
        self.registry = registry or standard_registry()
        self.bounds = bounds or PlausibilityBounds()
        self.allowed_events = allowed_events
        self.log = MessageLog()
        self.broadcasts: list[dict[str, Any]] = []
        self._twins: dict[str, TwinEntry] = {}
        self._assembler = FrameAssembler()
        self._sequence = 0
        channel.register_endpoint(
            SHIP, position or PlatformPosition(0.0, 0.0, 2.0), self._on_frame
        )

    # -- registry ---------------------------------------------------------------

    def register_digital_twin(self, twin: Twin, measurement_period: float | None = None) -> TwinEntry:
        if not twin.config.is_digital:
            raise BasestationError("only Digital Twins register at the basestation")
        if twin.platform in self._twins:
            raise BasestationError(f"a Digital Twin for {twin.platform} is already registered")
        entry = TwinEntry(twin, measurement_period or twin.config.measurement_period)
        self._twins[twin.platform] = entry
        return entry

    def twins(self) -> dict[str, TwinEntry]:
        return dict(self._twins)

    def entry(self, platform: str) -> TwinEntry:
        try:
            return self._twins[platform]
        except KeyError:
            raise UnknownPlatform(f"no Digital Twin registered for {platform!r}") from None

    def liveness(self, platform: str) -> bool:
        """Heard within 3x the platform's measurement period."""
        entry = self.entry(platform)
        if entry.last_heard is None:
            return False
        return (self.clock.now - entry.last_heard) <= 3.0 * entry.measurement_period

    # -- channel ingress -----------------------------------------------------------

    def _on_frame(self, src: str, frame_bytes: bytes) -> None:
        try:
            frame = Frame.from_bytes(frame_bytes)
            data = self._assembler.push(src, frame)
        except CodecError as exc:
            self._log_drop("?", src, f"bad_frame: {exc}")
            return
        if data is None:
            return
        try:
            envelope = decode(data, self.registry)
        except CodecError as exc:
            self._log_drop("?", src, f"decode_failure: {exc}")
            return
        if envelope.direction == Direction.PT_TO_DT:
            self.route_up(envelope)
        elif envelope.direction == Direction.BROADCAST:
            self._log_broadcast_arrival(envelope)
        else:
            self._log_drop(envelope.direction.name, src, "unexpected_direction_at_ship")

    def route_up(self, envelope: Envelope) -> bool:
        """Deliver a PT->DT envelope onto the registered DT's bus; log it.

        Failures are logged drop records, never fatal.
        """
        platform = PLATFORM_NAMES.get(envelope.platform_id)
        entry = self._twins.get(platform) if platform else None
        if entry is None:
            self._log_drop("PT_TO_DT", str(envelope.platform_id), "unknown_platform")
            return False
        table = entry.twin.topic_table
        if envelope.topic_index >= len(table):
            self._log_drop("PT_TO_DT", platform, "unknown_topic_index")
            return False
        topic = table[envelope.topic_index]
        try:
            message = message_from_envelope(envelope)
        except Exception as exc:
            self._log_drop("PT_TO_DT", platform, f"decode_failure: {exc}")
            return False
        flags = []
        if isinstance(message, StandardO2):
            entry.last_o2 = message
            if plausibility_check(message, self.bounds):
                flags.append("IMPLAUSIBLE")
                entry.implausible_count += 1
        elif isinstance(message, StandardStatus):
            entry.last_status = message
        entry.last_heard = self.clock.now
        entry.received += 1
        self.log.append(
            LogRecord(
                t=self.clock.now,
                direction="PT_TO_DT",
                platform=platform,
                skill_id=envelope.skill_id,
                topic=str(topic),
                type_name=TYPE_NAMES.get(envelope.type_id, f"type{envelope.type_id}"),
                payload=dict(envelope.payload),
                flags=flags,
            )
        )
        entry.twin.bus.publish(topic, message, ROUTER_SKILL)
        return True

    # -- channel egress ---------------------------------------------------------------

    def route_down(self, envelope: Envelope) -> int:
        """Encode, fragment, and send a DT->PT command toward its platform."""
        platform = PLATFORM_NAMES.get(envelope.platform_id)
        if platform is None or platform == SHIP:
            raise UnknownPlatform(f"cannot route down to platform id {envelope.platform_id}")
        entry = self.entry(platform)
        data = encode(envelope, self.registry)
        try:
            frames = fragment(data, envelope.sequence)
        except TooManyFragments as exc:
            raise OversizedAfterFragmentation(str(exc)) from exc
        table = entry.twin.topic_table
        topic = str(table[envelope.topic_index]) if envelope.topic_index < len(table) else ""
        self.log.append(
            LogRecord(
                t=self.clock.now,
                direction="DT_TO_PT",
                platform=platform,
                skill_id=envelope.skill_id,
                topic=topic,
                type_name=TYPE_NAMES.get(envelope.type_id, f"type{envelope.type_id}"),
                payload=dict(envelope.payload),
            )
        )
        for frame in frames:
            self.channel.send_im(SHIP, platform, frame.to_bytes())
        return len(frames)

    def broadcast_event(self, event: str) -> dict[str, Any]:
        """Broadcast an O2Event from the ship modem to every platform."""
        if not event:
            raise ValueError("event string must be non-empty")
        envelope = Envelope(
            platform_id=SHIP_ID,
            skill_id=SKILL_BASESTATION,
            topic_index=0,
            direction=Direction.BROADCAST,
            sequence=self._next_sequence(),
            type_id=O2Event.TYPE_ID,
            payload=O2Event(event).to_payload(),
        )
        data = encode(envelope, self.registry)
        frames = fragment(data, envelope.sequence)
        fates_by_dst: dict[str, dict[str, Any]] = {}
        for frame in frames:
            for fate in self.channel.broadcast_im(SHIP, frame.to_bytes()):
                slot = fates_by_dst.setdefault(
                    fate["dst"], {"dst": fate["dst"], "fate": "delivered", "t_arrival": None}
                )
                if fate["fate"] == "dropped":
                    slot["fate"] = "dropped"
                    slot["t_arrival"] = None
                elif slot["fate"] == "delivered":
                    slot["t_arrival"] = fate["t_arrival"]
        fates = list(fates_by_dst.values())
        summary = {
            "id": len(self.broadcasts),
            "t": self.clock.now,
            "event": event,
            "fates": fates,
        }
        self.broadcasts.append(summary)
        self.log.append(
            LogRecord(
                t=self.clock.now,
                direction="BROADCAST",
                platform=SHIP,
                skill_id=SKILL_BASESTATION,
                topic=SHIP_EVENT_TOPIC,
                type_name="O2Event",
                payload={"event": event},
                extra={"fates": fates},
            )
        )
        return summary

    # -- internals ---------------------------------------------------------------------

    def _log_broadcast_arrival(self, envelope: Envelope) -> None:
        platform = PLATFORM_NAMES.get(envelope.platform_id, str(envelope.platform_id))
        entry = self._twins.get(platform)
        topic = ""
        if entry is not None and envelope.topic_index < len(entry.twin.topic_table):
            topic = str(entry.twin.topic_table[envelope.topic_index])
        self.log.append(
            LogRecord(
                t=self.clock.now,
                direction="BROADCAST",
                platform=platform,
                skill_id=envelope.skill_id,
                topic=topic,
                type_name=TYPE_NAMES.get(envelope.type_id, f"type{envelope.type_id}"),
                payload=dict(envelope.payload),
            )
        )

    def _log_drop(self, direction: str, platform: str, reason: str) -> None:
        self.log.append(
            LogRecord(
                t=self.clock.now,
                direction=direction,
                platform=platform,
                skill_id=0,
                topic="",
                type_name="",
                payload={},
                flags=["DROP"],
                drop_reason=reason,
            )
        )

    def _next_sequence(self) -> int:
        seq = self._sequence % 0x10000
        self._sequence += 1
        return seq
