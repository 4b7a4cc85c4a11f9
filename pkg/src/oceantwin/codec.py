"""Compact binary control language for the acoustic link.

Message envelopes are serialized against schemas that are registered at
runtime (no code-generation step) and split into frames small enough for
a 64-byte instant-message payload.  All multi-byte integers are
little-endian, f32 values are IEEE-754 bits, and strings/bytes carry a
u16 length prefix.

Wire layout of an encoded envelope (header is exactly 8 bytes):

    version(u8)=1 | type_id(u8) | platform_id(u8) | skill_id(u8) |
    topic_index(u8) | direction(u8) | sequence(u16)  ...payload...

Frame layout (total length <= 64 bytes):

    envelope_sequence(u16) | fragment_index(u8) | fragment_count(u8) |
    chunk(<=60 bytes)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable

WIRE_VERSION = 1
HEADER_LEN = 8
FRAME_HEADER_LEN = 4
MAX_FRAME_LEN = 64
MAX_CHUNK_LEN = MAX_FRAME_LEN - FRAME_HEADER_LEN
MAX_FRAGMENTS = 255
MAX_ENCODED_LEN = MAX_FRAGMENTS * MAX_CHUNK_LEN  # 15300

_HEADER_STRUCT = struct.Struct("<BBBBBBH")
_FRAME_STRUCT = struct.Struct("<HBB")


class CodecError(Exception):
    """Base class for wire-format failures."""


class ConflictingSchema(CodecError):
    """Same type_id registered with a different field list."""


class UnknownType(CodecError):
    pass


class FieldKindMismatch(CodecError):
    pass


class TruncatedPayload(CodecError):
    pass


class TrailingBytes(CodecError):
    pass


class InvalidHeader(CodecError):
    pass


class TooManyFragments(CodecError):
    pass


class MissingFragment(CodecError):
    pass


class MixedSequence(CodecError):
    pass


class FieldKind(Enum):
    I64 = "i64"
    U16 = "u16"
    U8 = "u8"
    F32 = "f32"
    STRING = "string"
    BYTES = "bytes"


class Direction(IntEnum):
    PT_TO_DT = 0
    DT_TO_PT = 1
    BROADCAST = 2


@dataclass(frozen=True)
class MessageSchema:
    """Runtime-resolvable message definition.

    Field order is wire order.  ``fields`` maps each field name to a
    :class:`FieldKind`.
    """

    type_id: int
    name: str
    fields: tuple[tuple[str, FieldKind], ...]

    def __post_init__(self):
        if not 0 <= self.type_id <= 255:
            raise ValueError(f"type_id {self.type_id} out of u8 range")
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in schema {self.name!r}")


class SchemaRegistry:
    """Write-once-then-read-only map of type_id -> MessageSchema."""

    def __init__(self):
        self._schemas: dict[int, MessageSchema] = {}

    def __len__(self) -> int:
        return len(self._schemas)

    def __contains__(self, type_id: int) -> bool:
        return type_id in self._schemas

    def get(self, type_id: int) -> MessageSchema:
        try:
            return self._schemas[type_id]
        except KeyError:
            raise UnknownType(f"no schema registered for type_id {type_id}") from None

    def schemas(self) -> list[MessageSchema]:
        return list(self._schemas.values())


def register_schema(registry: SchemaRegistry, schema: MessageSchema) -> SchemaRegistry:
    """Add ``schema`` to the registry.

    Registering an identical schema twice is a no-op; a different
    definition under the same type_id raises :class:`ConflictingSchema`
    instead of silently corrupting future decodes.
    """
    existing = registry._schemas.get(schema.type_id)
    if existing is not None:
        if existing != schema:
            raise ConflictingSchema(
                f"type_id {schema.type_id} already registered as {existing.name!r} "
                f"with a different definition"
            )
        return registry
    registry._schemas[schema.type_id] = schema
    return registry


@dataclass(frozen=True)
class Envelope:
    """A routed message: provenance header plus decoded payload fields."""

    platform_id: int
    skill_id: int
    topic_index: int
    direction: Direction
    sequence: int
    type_id: int
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Frame:
    """One wire fragment of an encoded envelope (total <= 64 bytes)."""

    envelope_sequence: int
    fragment_index: int
    fragment_count: int
    chunk: bytes

    def __len__(self) -> int:
        return FRAME_HEADER_LEN + len(self.chunk)

    def to_bytes(self) -> bytes:
        return _FRAME_STRUCT.pack(
            self.envelope_sequence, self.fragment_index, self.fragment_count
        ) + self.chunk

    @classmethod
    def from_bytes(cls, data: bytes) -> "Frame":
        if len(data) < FRAME_HEADER_LEN:
            raise TruncatedPayload(f"frame shorter than header: {len(data)} bytes")
        if len(data) > MAX_FRAME_LEN:
            raise InvalidHeader(f"frame exceeds 64-byte budget: {len(data)} bytes")
        seq, idx, count = _FRAME_STRUCT.unpack_from(data)
        if count == 0 or idx >= count:
            raise InvalidHeader(f"bad fragment indices {idx}/{count}")
        return cls(seq, idx, count, bytes(data[FRAME_HEADER_LEN:]))


def _check_uint(value: Any, bits: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FieldKindMismatch(f"{name}: expected unsigned integer, got {type(value).__name__}")
    if not 0 <= value < (1 << bits):
        raise FieldKindMismatch(f"{name}: {value} out of u{bits} range")
    return value


def _encode_field(buf: bytearray, name: str, kind: FieldKind, value: Any) -> None:
    if kind is FieldKind.I64:
        if isinstance(value, bool) or not isinstance(value, int):
            raise FieldKindMismatch(f"{name}: expected integer, got {type(value).__name__}")
        if not -(1 << 63) <= value < (1 << 63):
            raise FieldKindMismatch(f"{name}: {value} out of i64 range")
        buf += struct.pack("<q", value)
    elif kind is FieldKind.U16:
        buf += struct.pack("<H", _check_uint(value, 16, name))
    elif kind is FieldKind.U8:
        buf += struct.pack("<B", _check_uint(value, 8, name))
    elif kind is FieldKind.F32:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FieldKindMismatch(f"{name}: expected float, got {type(value).__name__}")
        buf += struct.pack("<f", value)
    elif kind is FieldKind.STRING:
        if not isinstance(value, str):
            raise FieldKindMismatch(f"{name}: expected str, got {type(value).__name__}")
        raw = value.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FieldKindMismatch(f"{name}: string longer than u16 length prefix")
        buf += struct.pack("<H", len(raw)) + raw
    elif kind is FieldKind.BYTES:
        if not isinstance(value, (bytes, bytearray)):
            raise FieldKindMismatch(f"{name}: expected bytes, got {type(value).__name__}")
        if len(value) > 0xFFFF:
            raise FieldKindMismatch(f"{name}: bytes longer than u16 length prefix")
        buf += struct.pack("<H", len(value)) + bytes(value)
    else:  # pragma: no cover - enum is closed
        raise FieldKindMismatch(f"{name}: unsupported kind {kind}")


def encode(envelope: Envelope, registry: SchemaRegistry) -> bytes:
    """Serialize an envelope to its deterministic wire form."""
    schema = registry.get(envelope.type_id)
    extra = set(envelope.payload) - {n for n, _ in schema.fields}
    if extra:
        raise FieldKindMismatch(f"payload fields not in schema {schema.name!r}: {sorted(extra)}")
    buf = bytearray(
        _HEADER_STRUCT.pack(
            WIRE_VERSION,
            _check_uint(envelope.type_id, 8, "type_id"),
            _check_uint(envelope.platform_id, 8, "platform_id"),
            _check_uint(envelope.skill_id, 8, "skill_id"),
            _check_uint(envelope.topic_index, 8, "topic_index"),
            int(Direction(envelope.direction)),
            _check_uint(envelope.sequence, 16, "sequence"),
        )
    )
    for name, kind in schema.fields:
        if name not in envelope.payload:
            raise FieldKindMismatch(f"payload missing field {name!r}")
        _encode_field(buf, name, kind, envelope.payload[name])
    return bytes(buf)


def _decode_field(data: bytes, offset: int, name: str, kind: FieldKind) -> tuple[Any, int]:
    def take(n: int) -> bytes:
        if offset + n > len(data):
            raise TruncatedPayload(f"payload ends inside field {name!r}")
        return data[offset : offset + n]

    if kind is FieldKind.I64:
        return struct.unpack("<q", take(8))[0], offset + 8
    if kind is FieldKind.U16:
        return struct.unpack("<H", take(2))[0], offset + 2
    if kind is FieldKind.U8:
        return take(1)[0], offset + 1
    if kind is FieldKind.F32:
        return struct.unpack("<f", take(4))[0], offset + 4
    if kind in (FieldKind.STRING, FieldKind.BYTES):
        length = struct.unpack("<H", take(2))[0]
        raw = data[offset + 2 : offset + 2 + length]
        if len(raw) < length:
            raise TruncatedPayload(f"payload ends inside field {name!r}")
        value = raw.decode("utf-8") if kind is FieldKind.STRING else bytes(raw)
        return value, offset + 2 + length
    raise FieldKindMismatch(f"{name}: unsupported kind {kind}")  # pragma: no cover


def decode(data: bytes, registry: SchemaRegistry) -> Envelope:
    """Inverse of :func:`encode`; rejects trailing garbage bytes."""
    if len(data) < HEADER_LEN:
        raise TruncatedPayload(f"need {HEADER_LEN}-byte header, got {len(data)} bytes")
    version, type_id, platform_id, skill_id, topic_index, direction, sequence = (
        _HEADER_STRUCT.unpack_from(data)
    )
    if version != WIRE_VERSION:
        raise InvalidHeader(f"unsupported wire version {version}")
    try:
        direction = Direction(direction)
    except ValueError:
        raise InvalidHeader(f"unknown direction byte {direction}") from None
    schema = registry.get(type_id)
    payload: dict[str, Any] = {}
    offset = HEADER_LEN
    for name, kind in schema.fields:
        payload[name], offset = _decode_field(data, offset, name, kind)
    if offset != len(data):
        raise TrailingBytes(f"{len(data) - offset} byte(s) after payload of {schema.name!r}")
    return Envelope(platform_id, skill_id, topic_index, direction, sequence, type_id, payload)


def fragment(encoded: bytes, envelope_sequence: int) -> list[Frame]:
    """Split an encoded envelope into <=64-byte frames (60-byte chunks)."""
    if not encoded:
        raise ValueError("cannot fragment an empty envelope")
    count = math.ceil(len(encoded) / MAX_CHUNK_LEN)
    if count > MAX_FRAGMENTS:
        raise TooManyFragments(
            f"{len(encoded)} bytes needs {count} fragments (max {MAX_FRAGMENTS})"
        )
    _check_uint(envelope_sequence, 16, "envelope_sequence")
    return [
        Frame(
            envelope_sequence,
            i,
            count,
            encoded[i * MAX_CHUNK_LEN : (i + 1) * MAX_CHUNK_LEN],
        )
        for i in range(count)
    ]


def reassemble(frames: Iterable[Frame]) -> bytes:
    """Rebuild the encoded envelope from a complete fragment set.

    Arrival order does not matter.  All frames must agree on
    envelope_sequence and fragment_count.
    """
    chunks: dict[int, bytes] = {}
    seq = None
    count = None
    for frame in frames:
        if seq is None:
            seq, count = frame.envelope_sequence, frame.fragment_count
        elif frame.envelope_sequence != seq or frame.fragment_count != count:
            raise MixedSequence(
                f"frame {frame.envelope_sequence}/{frame.fragment_count} mixed into "
                f"set {seq}/{count}"
            )
        if frame.fragment_index >= count:
            raise MixedSequence(f"fragment_index {frame.fragment_index} >= count {count}")
        prev = chunks.setdefault(frame.fragment_index, frame.chunk)
        if prev != frame.chunk:
            raise MixedSequence(f"conflicting duplicate of fragment {frame.fragment_index}")
    if seq is None:
        raise MissingFragment("no frames supplied")
    missing = [i for i in range(count) if i not in chunks]
    if missing:
        raise MissingFragment(f"sequence {seq} missing fragments {missing} of {count}")
    return b"".join(chunks[i] for i in range(count))


class FrameAssembler:
    """Accumulates frames per (stream key, envelope sequence) until complete."""

    def __init__(self):
        self._pending: dict[tuple[Any, int], list[Frame]] = {}

    def push(self, key: Any, frame: Frame) -> bytes | None:
        """Add one frame; returns the full encoded envelope when complete."""
        bucket = self._pending.setdefault((key, frame.envelope_sequence), [])
        bucket.append(frame)
        if len(bucket) < frame.fragment_count:
            return None
        del self._pending[(key, frame.envelope_sequence)]
        return reassemble(bucket)

    def pending_count(self) -> int:
        return len(self._pending)
