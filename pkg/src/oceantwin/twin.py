"""Twin runtime: one code path for physical and digital twins.

A single environment flag (``TwinConfig.is_digital``) switches the same
runtime between the deployed Physical Twin (measures, syncs data up,
accepts commands only from its Digital Twin) and the shipboard Digital
Twin (receives data, originates commands).  Sensors run either against a
deterministic synthetic profile or against a digital-shadow recording.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .bus import MessageBus, Skill, TopicPath, TopicPattern, match_pattern
from .channel import VirtualClock
from .codec import Direction, Envelope
from .messages import (
    PLATFORM_IDS,
    SKILL_BEHAVIOR,
    SKILL_O2,
    BehaviorStatus,
    O2Event,
    SetBehavior,
    StandardO2,
    StandardStatus,
    f32,
    message_from_envelope,
)

# Behavior registry; ids >= 16 are free for platform-specific additions.
BEHAVIOR_IDLE = 0
BEHAVIOR_MEASURE_DEFAULT = 1
BEHAVIOR_OXIA = 2
BEHAVIOR_HYPOXIA = 3
BEHAVIOR_MEASURE_FAST = 4
BEHAVIOR_MEASURE_SLOW = 5

BEHAVIOR_NAMES = {
    BEHAVIOR_IDLE: "IDLE",
    BEHAVIOR_MEASURE_DEFAULT: "MEASURE_DEFAULT",
    BEHAVIOR_OXIA: "OXIA",
    BEHAVIOR_HYPOXIA: "HYPOXIA",
    BEHAVIOR_MEASURE_FAST: "MEASURE_FAST",
    BEHAVIOR_MEASURE_SLOW: "MEASURE_SLOW",
}

FAST_PERIOD_S = 5.0
SLOW_PERIOD_S = 300.0
MIN_PERIOD_S = 5.0
MAX_PERIOD_S = 300.0

DEFAULT_EVENT_BEHAVIORS = {"Oxia": BEHAVIOR_OXIA, "Hypoxia": BEHAVIOR_HYPOXIA}


class TwinError(Exception):
    pass


class DuplicateTwin(TwinError):
    pass


class InvalidPeriod(TwinError):
    pass


class BeforeFirstSample(TwinError):
    pass


class LocalBehaviorFailed(TwinError):
    """The Digital Twin's guard stopped a command that failed locally."""


@dataclass(frozen=True)
class Thresholds:
    """Hysteresis band for the Oxia/Hypoxia detector.

    The 63 µM default is a conventional hypoxia definition, not a mission
    value; deployments should configure their own band.
    """

    hypoxia_enter: float = 63.0
    oxia_enter: float = 150.0

    def __post_init__(self):
        if not self.hypoxia_enter < self.oxia_enter:
            raise ValueError("hypoxia_enter must be below oxia_enter")


@dataclass(frozen=True)
class PlausibilityBounds:
    """Closed plausible-oxygen interval in µM; outside flags IMPLAUSIBLE."""

    min_plausible: float = 0.0
    max_plausible: float = 500.0


def plausibility_check(sample: StandardO2, bounds: PlausibilityBounds) -> bool:
    """True when the sample is implausible (outside the closed bounds)."""
    return not (bounds.min_plausible <= sample.oxygen <= bounds.max_plausible)


class O2EventDetector:
    """Per-platform hysteresis state machine over oxygen samples."""

    def __init__(self, thresholds: Thresholds):
        self.thresholds = thresholds
        self.in_hypoxia = False

    def update(self, sample: StandardO2) -> O2Event | None:
        if not self.in_hypoxia and sample.oxygen < self.thresholds.hypoxia_enter:
            self.in_hypoxia = True
            return O2Event("Hypoxia")
        if self.in_hypoxia and sample.oxygen > self.thresholds.oxia_enter:
            self.in_hypoxia = False
            return O2Event("Oxia")
        return None


@dataclass(frozen=True)
class ShadowRecording:
    """Recorded sensor time series replayed by emulated hardware.

    ``samples`` holds (offset_ms, oxygen, saturation, temperature) rows
    with strictly increasing offsets.
    """

    samples: tuple[tuple[int, float, float, float], ...]
    loop: bool = False

    def __post_init__(self):
        if not self.samples:
            raise ValueError("shadow recording must contain at least one sample")
        offsets = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("shadow recording offsets must be strictly increasing")

    @property
    def span_ms(self) -> int:
        return self.samples[-1][0] - self.samples[0][0]

    @classmethod
    def load(cls, path: str | Path, loop: bool = False) -> "ShadowRecording":
        """Read a JSON-lines recording: one {offset_ms, oxygen, ...} per line."""
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rows.append(
                (
                    int(rec["offset_ms"]),
                    f32(rec["oxygen"]),
                    f32(rec["saturation"]),
                    f32(rec["temperature"]),
                )
            )
        return cls(tuple(rows), loop=loop)


def emulate_sensor(recording: ShadowRecording, t_ms: int) -> StandardO2:
    """Zero-order-hold sample at virtual time ``t_ms`` (pure function).

    With ``loop`` set, time wraps modulo the recording span.  The returned
    timestamp is the recorded offset of the held sample.
    """
    samples = recording.samples
    first = samples[0][0]
    if recording.loop:
        span = recording.span_ms
        t_ms = first + ((t_ms - first) % span) if span > 0 else first
    if t_ms < first:
        raise BeforeFirstSample(f"t={t_ms} ms precedes first sample at {first} ms")
    idx = bisect_right(samples, t_ms, key=lambda s: s[0]) - 1
    offset, oxygen, saturation, temperature = samples[idx]
    return StandardO2(offset, oxygen, saturation, temperature)


def synthetic_o2(platform: str, t_s: float) -> tuple[float, float, float]:
    """Deterministic stand-in for a real oxygen optode (µM, %, °C)."""
    phase = PLATFORM_IDS.get(platform, 0) * 0.7
    oxygen = 230.0 + 6.0 * math.sin(2.0 * math.pi * t_s / 3600.0 + phase)
    temperature = 10.5 + 0.8 * math.sin(2.0 * math.pi * t_s / 7200.0 + phase)
    saturation = max(0.0, oxygen / 285.0 * 100.0)
    return f32(oxygen), f32(saturation), f32(temperature)


@dataclass
class TwinConfig:
    """Identity plus the environment flag that separates PT from DT."""

    platform: str
    is_digital: bool = False
    measurement_period: float = 60.0
    sync_topics: tuple[str, ...] | None = None
    hardware_mode: dict[str, str] = field(default_factory=lambda: {"o2": "real-simulated"})
    shadow: ShadowRecording | None = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    status_period: float | None = None
    behavior_effects: dict[int, tuple[str, ...]] = field(default_factory=dict)
    event_behaviors: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_EVENT_BEHAVIORS)
    )
    guard_commands: bool = False
    oxia_period: float | None = None
    hypoxia_period: float | None = None
    extra_behaviors: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.platform not in PLATFORM_IDS:
            raise TwinError(f"unknown platform {self.platform!r}")
        if not MIN_PERIOD_S <= self.measurement_period <= MAX_PERIOD_S:
            raise InvalidPeriod(
                f"measurement_period {self.measurement_period} outside "
                f"[{MIN_PERIOD_S}, {MAX_PERIOD_S}] s"
            )
        if self.sync_topics is None:
            ns = self.platform.lower()
            self.sync_topics = (f"/{ns}/skills/o2/**", f"/{ns}/skills/behavior/status")
        if self.hardware_mode.get("o2") == "emulated-shadow" and self.shadow is None:
            raise TwinError("emulated-shadow mode needs a shadow recording")
        for bid in self.extra_behaviors:
            if bid < 16:
                raise TwinError("platform-specific behavior ids start at 16")

    def digital_copy(self) -> "TwinConfig":
        return replace(self, is_digital=True)


@dataclass(frozen=True)
class CommandAcceptance:
    accepted: bool
    reason: str | None = None


UplinkFn = Callable[[Envelope], None]


class Twin:
    """One ocean observation system runtime (physical or digital).

    All interaction flows through the local bus and the two transport
    callables; twins never share mutable state with each other.
    """

    def __init__(
        self,
        config: TwinConfig,
        bus: MessageBus,
        clock: VirtualClock,
        uplink: UplinkFn | None = None,
        broadcast: UplinkFn | None = None,
    ):
        self.config = config
        self.bus = bus
        self.clock = clock
        self.uplink = uplink
        self.broadcast_fn = broadcast
        self.platform = config.platform
        self.platform_id = PLATFORM_IDS[config.platform]

        ns = TopicPath.parse(f"/{config.platform.lower()}/skills")
        self.o2_skill = Skill(
            SKILL_O2, "o2", ns.child("o2"), publishers=("std", "event")
        )
        self.behavior_skill = Skill(
            SKILL_BEHAVIOR, "behavior", ns.child("behavior"),
            publishers=("status",), subscribers=("set",),
        )
        self.skills = (self.o2_skill, self.behavior_skill)

        # Declared-topic table; its order defines the wire topic_index.
        self.topic_table: list[TopicPath] = []
        self._topic_skill: dict[str, Skill] = {}
        for skill in self.skills:
            for topic in skill.publisher_topics() + skill.subscriber_topics():
                self.topic_table.append(topic)
                self._topic_skill[str(topic)] = skill
        self._topic_index = {str(t): i for i, t in enumerate(self.topic_table)}

        self.sync_patterns = [TopicPattern.parse(p) for p in config.sync_topics]
        self.o2_std_topic = self.o2_skill.resolve("std")
        self.o2_event_topic = self.o2_skill.resolve("event")
        self.status_topic = self.behavior_skill.resolve("status")
        self.set_topic = self.behavior_skill.resolve("set")

        self.behaviors = dict(BEHAVIOR_NAMES) | dict(config.extra_behaviors)
        self.current_behavior = BEHAVIOR_MEASURE_DEFAULT
        self.behavior_status = BehaviorStatus.RUNNING
        self.behavior_log: list[tuple[float, int]] = []
        self.effect_log: list[tuple[float, str]] = []
        self.rejected_log: list[tuple[float, str]] = []

        self.detector = O2EventDetector(config.thresholds)
        self.last_command_status: StandardStatus | None = None
        self._sequence = 0
        self._started = False
        self._measure_handle = None
        self._status_handle = None

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Twin":
        if self._started:
            raise TwinError(f"twin {self.platform} already started")
        self._started = True
        self.behavior_log.append((self.clock.now, self.current_behavior))
        if self.config.is_digital:
            # Decision node: operator-injected events sync down to the PT.
            self.bus.subscribe(str(self.o2_event_topic), self._decision_node, self.o2_skill)
        else:
            self._schedule_measurement()
            if self.config.status_period:
                self._status_handle = self.clock.schedule_in(
                    self.config.status_period, self._status_tick
                )
        return self

    def stop(self) -> None:
        """Cancel the periodic cycles (used to end a scenario run cleanly)."""
        if self._measure_handle is not None:
            self._measure_handle.cancel()
            self._measure_handle = None
        if self._status_handle is not None:
            self._status_handle.cancel()
            self._status_handle = None

    # -- synchronization out ---------------------------------------------------

    def next_sequence(self) -> int:
        seq = self._sequence % 0x10000
        self._sequence += 1
        return seq

    def sync_out(self, topic: TopicPath | str, message: Any) -> Envelope | None:
        """Publish locally; on a Physical Twin, also sync matching topics up.

        Returns the uplinked envelope, or None when nothing left the twin
        (digital twin, or topic not in the sync list).
        """
        if isinstance(topic, str):
            topic = TopicPath.parse(topic)
        skill = self._topic_skill.get(str(topic))
        self.bus.publish(topic, message, skill)
        if self.config.is_digital:
            return None
        if not any(match_pattern(p, topic) for p in self.sync_patterns):
            return None
        envelope = self._envelope_for(topic, message, Direction.PT_TO_DT)
        if self.uplink is not None:
            self.uplink(envelope)
        return envelope

    def _envelope_for(self, topic: TopicPath, message: Any, direction: Direction) -> Envelope:
        skill = self._topic_skill[str(topic)]
        return Envelope(
            platform_id=self.platform_id,
            skill_id=skill.skill_id,
            topic_index=self._topic_index[str(topic)],
            direction=direction,
            sequence=self.next_sequence(),
            type_id=message.TYPE_ID,
            payload=message.to_payload(),
        )

    # -- commands ---------------------------------------------------------------

    def handle_set_behavior(self, behavior_id: int) -> StandardStatus:
        """Stop the current behavior, start the new one, report status."""
        t_ms = self._now_ms()
        if behavior_id not in self.behaviors:
            status = StandardStatus(t_ms, behavior_id, BehaviorStatus.FAILURE)
            self.sync_out(self.status_topic, status)
            return status
        if self.behavior_status == BehaviorStatus.RUNNING:
            self.sync_out(
                self.status_topic,
                StandardStatus(t_ms, self.current_behavior, BehaviorStatus.FINISHED),
            )
        self.current_behavior = behavior_id
        self.behavior_status = BehaviorStatus.RUNNING
        self.behavior_log.append((self.clock.now, behavior_id))
        for effect in self.config.behavior_effects.get(behavior_id, ()):
            self.effect_log.append((self.clock.now, effect))
        status = StandardStatus(t_ms, behavior_id, BehaviorStatus.RUNNING)
        self.sync_out(self.status_topic, status)
        self._reschedule_measurement()
        return status

    def sync_in_command(self, envelope: Envelope) -> CommandAcceptance:
        """Accept a command iff it was routed down by this platform's DT."""
        if self.config.is_digital:
            raise TwinError("channel commands are handled by Physical Twins only")
        if envelope.direction != Direction.DT_TO_PT:
            return self._reject("rejected_direct_command")
        if envelope.platform_id != self.platform_id:
            return self._reject("rejected_foreign_command")
        try:
            message = message_from_envelope(envelope)
        except Exception:
            return self._reject("malformed_payload")
        if isinstance(message, SetBehavior):
            self.handle_set_behavior(message.behavior_id)
            return CommandAcceptance(True)
        if isinstance(message, O2Event):
            self._apply_event(message)
            self._broadcast_event(message)
            return CommandAcceptance(True)
        return self._reject("unsupported_command_type")

    def receive_envelope(self, envelope: Envelope) -> CommandAcceptance:
        """Entry point for everything arriving over the acoustic channel."""
        if envelope.direction == Direction.BROADCAST:
            if envelope.platform_id == self.platform_id:
                return self._reject("own_broadcast")
            try:
                message = message_from_envelope(envelope)
            except Exception:
                return self._reject("malformed_payload")
            if isinstance(message, O2Event) and message.event in self.config.event_behaviors:
                self._apply_event(message)
                return CommandAcceptance(True)
            return self._reject("ignored_broadcast")
        return self.sync_in_command(envelope)

    def guarded_sync_command(self, command: SetBehavior) -> Envelope:
        """DT-side: apply the behavior locally, then sync it to the PT.

        With the guard enabled, a local failure raises
        :class:`LocalBehaviorFailed` and nothing is synchronized; with the
        guard off (the mission's direct mode) the command always goes down.
        """
        if not self.config.is_digital:
            raise TwinError("guarded_sync_command runs on the Digital Twin")
        status = self.handle_set_behavior(command.behavior_id)
        self.last_command_status = status
        if self.config.guard_commands and status.status != BehaviorStatus.RUNNING:
            raise LocalBehaviorFailed(
                f"behavior {command.behavior_id} failed locally; not synchronized"
            )
        envelope = self._envelope_for(self.set_topic, command, Direction.DT_TO_PT)
        if self.uplink is not None:
            self.uplink(envelope)
        return envelope

    def _decision_node(self, topic, message, publisher) -> None:
        if not isinstance(message, O2Event):
            return
        if publisher is not None and publisher.name == "twin-sync":
            return  # inbound PT telemetry is not echoed back down
        self._apply_event(message)
        envelope = self._envelope_for(self.o2_event_topic, message, Direction.DT_TO_PT)
        if self.uplink is not None:
            self.uplink(envelope)

    def _apply_event(self, event: O2Event) -> None:
        behavior = self.config.event_behaviors.get(event.event)
        if behavior is not None:
            self.handle_set_behavior(behavior)

    def _broadcast_event(self, event: O2Event) -> None:
        if self.broadcast_fn is None:
            return
        envelope = self._envelope_for(self.o2_event_topic, event, Direction.BROADCAST)
        self.broadcast_fn(envelope)

    def _reject(self, reason: str) -> CommandAcceptance:
        self.rejected_log.append((self.clock.now, reason))
        return CommandAcceptance(False, reason)

    # -- measurement cycle -------------------------------------------------------

    def current_period(self) -> float | None:
        """Effective sampling period of the current behavior (None = idle)."""
        b = self.current_behavior
        if b == BEHAVIOR_IDLE:
            return None
        if b == BEHAVIOR_MEASURE_FAST:
            return FAST_PERIOD_S
        if b == BEHAVIOR_MEASURE_SLOW:
            return SLOW_PERIOD_S
        if b == BEHAVIOR_HYPOXIA:
            return self.config.hypoxia_period or FAST_PERIOD_S
        if b == BEHAVIOR_OXIA:
            return self.config.oxia_period or self.config.measurement_period
        return self.config.measurement_period

    def _schedule_measurement(self) -> None:
        period = self.current_period()
        if period is not None:
            self._measure_handle = self.clock.schedule_in(period, self._measurement_tick)
        else:
            self._measure_handle = None

    def _reschedule_measurement(self) -> None:
        if self.config.is_digital or not self._started:
            return
        if self._measure_handle is not None:
            self._measure_handle.cancel()
        self._schedule_measurement()

    def _measurement_tick(self) -> None:
        self._measure_handle = None
        sample = self._read_o2()
        self.sync_out(self.o2_std_topic, sample)
        event = self.detector.update(sample)
        if event is not None:
            self.sync_out(self.o2_event_topic, event)
        self._schedule_measurement()

    def _read_o2(self) -> StandardO2:
        t_ms = self._now_ms()
        if self.config.hardware_mode.get("o2") == "emulated-shadow":
            held = emulate_sensor(self.config.shadow, t_ms)
            return StandardO2(t_ms, held.oxygen, held.saturation, held.temperature)
        oxygen, saturation, temperature = synthetic_o2(self.platform, self.clock.now)
        return StandardO2(t_ms, oxygen, saturation, temperature)

    def _status_tick(self) -> None:
        status = StandardStatus(self._now_ms(), self.current_behavior, self.behavior_status)
        self.sync_out(self.status_topic, status)
        self._status_handle = self.clock.schedule_in(self.config.status_period, self._status_tick)

    def _now_ms(self) -> int:
        return int(round(self.clock.now * 1000))


def start_twin(
    config: TwinConfig,
    bus: MessageBus,
    clock: VirtualClock,
    uplink: UplinkFn | None = None,
    broadcast: UplinkFn | None = None,
    deployment: set | None = None,
) -> Twin:
    """Build and start a twin; ``deployment`` guards platform uniqueness."""
    if deployment is not None:
        key = (config.platform, config.is_digital)
        if key in deployment:
            kind = "digital" if config.is_digital else "physical"
            raise DuplicateTwin(f"a {kind} twin for {config.platform} already exists")
        deployment.add(key)
    return Twin(config, bus, clock, uplink=uplink, broadcast=broadcast).start()
