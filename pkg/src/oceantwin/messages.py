"""The four standard inter-platform message types and their wire schemas.

Every ocean observation system exchanges StandardO2, StandardStatus,
SetBehavior, and O2Event messages.  Schemas are registered at runtime
against the codec; numeric ids below are this deployment's wire tags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Any

from .codec import (
    Envelope,
    FieldKind,
    MessageSchema,
    SchemaRegistry,
    register_schema,
)

# Wire platform ids; 0 is the ship-side basestation modem.
SHIP = "SHIP"
SHIP_ID = 0
PLATFORM_IDS = {"BIGO": 1, "FLUX": 2, "CRAWLERSIM": 3, "MANSIO": 4, "VIATOR": 5}
PLATFORM_NAMES = {v: k for k, v in PLATFORM_IDS.items()} | {SHIP_ID: SHIP}

SKILL_BASESTATION = 0
SKILL_O2 = 1
SKILL_BEHAVIOR = 2


def f32(value: float) -> float:
    """Round to the nearest IEEE-754 single so values survive the wire exactly."""
    return struct.unpack("<f", struct.pack("<f", value))[0]


class BehaviorStatus(IntEnum):
    RUNNING = 0
    FINISHED = 1
    FAILURE = 2


@dataclass(frozen=True)
class StandardO2:
    """One oxygen measurement: epoch ms, µM, % saturation, °C."""

    timestamp_ms: int
    oxygen: float
    saturation: float
    temperature: float

    TYPE_ID = 1

    def __post_init__(self):
        if self.saturation < 0:
            raise ValueError("saturation must be >= 0")

    def to_payload(self) -> dict[str, Any]:
        return {
            "timestamp_ms": self.timestamp_ms,
            "oxygen": f32(self.oxygen),
            "saturation": f32(self.saturation),
            "temperature": f32(self.temperature),
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "StandardO2":
        return cls(
            payload["timestamp_ms"],
            payload["oxygen"],
            payload["saturation"],
            payload["temperature"],
        )


@dataclass(frozen=True)
class StandardStatus:
    """Behavior report: epoch ms, behavior id, running/finished/failure."""

    timestamp_ms: int
    behavior_id: int
    status: BehaviorStatus

    TYPE_ID = 2

    def to_payload(self) -> dict[str, Any]:
        return {
            "timestamp_ms": self.timestamp_ms,
            "behavior_id": self.behavior_id,
            "status": int(self.status),
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "StandardStatus":
        return cls(
            payload["timestamp_ms"],
            payload["behavior_id"],
            BehaviorStatus(payload["status"]),
        )


@dataclass(frozen=True)
class SetBehavior:
    """Command carrying the id of the behavior to execute."""

    behavior_id: int

    TYPE_ID = 3

    def to_payload(self) -> dict[str, Any]:
        return {"behavior_id": self.behavior_id}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "SetBehavior":
        return cls(payload["behavior_id"])


@dataclass(frozen=True)
class O2Event:
    """Detected environmental event, e.g. "Oxia" or "Hypoxia"."""

    event: str

    TYPE_ID = 4

    def __post_init__(self):
        if not self.event:
            raise ValueError("event string must be non-empty")

    def to_payload(self) -> dict[str, Any]:
        return {"event": self.event}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "O2Event":
        return cls(payload["event"])


MESSAGE_TYPES = {
    StandardO2.TYPE_ID: StandardO2,
    StandardStatus.TYPE_ID: StandardStatus,
    SetBehavior.TYPE_ID: SetBehavior,
    O2Event.TYPE_ID: O2Event,
}
TYPE_NAMES = {tid: cls.__name__ for tid, cls in MESSAGE_TYPES.items()}

STANDARD_SCHEMAS = (
    MessageSchema(
        StandardO2.TYPE_ID,
        "StandardO2",
        (
            ("timestamp_ms", FieldKind.I64),
            ("oxygen", FieldKind.F32),
            ("saturation", FieldKind.F32),
            ("temperature", FieldKind.F32),
        ),
    ),
    MessageSchema(
        StandardStatus.TYPE_ID,
        "StandardStatus",
        (
            ("timestamp_ms", FieldKind.I64),
            ("behavior_id", FieldKind.U8),
            ("status", FieldKind.U8),
        ),
    ),
    MessageSchema(SetBehavior.TYPE_ID, "SetBehavior", (("behavior_id", FieldKind.U8),)),
    MessageSchema(O2Event.TYPE_ID, "O2Event", (("event", FieldKind.STRING),)),
)


def standard_registry() -> SchemaRegistry:
    """Registry holding the four standard message schemas."""
    registry = SchemaRegistry()
    for schema in STANDARD_SCHEMAS:
        register_schema(registry, schema)
    return registry


def message_from_envelope(envelope: Envelope):
    """Rehydrate the typed message carried by a decoded envelope."""
    cls = MESSAGE_TYPES.get(envelope.type_id)
    if cls is None:
        raise ValueError(f"envelope carries unknown type_id {envelope.type_id}")
    return cls.from_payload(envelope.payload)


def payload_for(message) -> tuple[int, dict[str, Any]]:
    """(type_id, payload dict) for one of the standard messages."""
    return message.TYPE_ID, message.to_payload()
