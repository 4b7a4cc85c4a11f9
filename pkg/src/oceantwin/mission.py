"""Mission assembly: config file -> running twins, channel, basestation.

A mission config (TOML) declares the platform roster, channel parameters,
thresholds, and run settings.  :class:`MissionRuntime` builds the whole
deployment: one Physical Twin per platform on the acoustic channel, one
Digital Twin per platform registered at the basestation, plus the wiring
(encode/fragment/reassemble) between twins and the channel.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .basestation import Basestation
from .bus import MessageBus, ParameterStore
from .channel import AcousticChannel, ChannelParams, PlatformPosition, VirtualClock
from .codec import CodecError, Frame, FrameAssembler, decode, encode, fragment
from .messages import PLATFORM_IDS, SHIP, standard_registry
from .twin import (
    BEHAVIOR_NAMES,
    PlausibilityBounds,
    ShadowRecording,
    Thresholds,
    Twin,
    TwinConfig,
    start_twin,
)

_BEHAVIOR_IDS = {name: bid for bid, name in BEHAVIOR_NAMES.items()}


class MissionConfigError(Exception):
    pass


@dataclass
class PlatformSpec:
    name: str
    position: PlatformPosition
    measurement_period: float = 60.0
    sync_topics: tuple[str, ...] | None = None
    shadow_recording: str | None = None
    shadow_loop: bool = False
    status_period: float | None = None
    behavior_effects: dict[int, tuple[str, ...]] = field(default_factory=dict)
    oxia_period: float | None = None
    hypoxia_period: float | None = None

    def __post_init__(self):
        if self.name not in PLATFORM_IDS:
            raise MissionConfigError(f"unknown platform {self.name!r}")


@dataclass
class MissionConfig:
    platforms: list[PlatformSpec]
    channel: ChannelParams = field(default_factory=ChannelParams)
    thresholds: Thresholds = field(default_factory=Thresholds)
    bounds: PlausibilityBounds = field(default_factory=PlausibilityBounds)
    guard_commands: bool = False
    seed: int = 42
    duration: float = 3600.0
    mode: str = "virtual"
    events: tuple[str, ...] = ("Oxia", "Hypoxia")
    ship_position: PlatformPosition = field(default_factory=lambda: PlatformPosition(0.0, 0.0, 2.0))

    def __post_init__(self):
        names = [p.name for p in self.platforms]
        if len(set(names)) != len(names):
            raise MissionConfigError("platform names must be unique")
        if self.mode not in ("virtual", "realtime"):
            raise MissionConfigError(f"mode must be virtual or realtime, not {self.mode!r}")
        for spec in self.platforms:
            if spec.shadow_recording and not Path(spec.shadow_recording).exists():
                raise MissionConfigError(
                    f"shadow recording for {spec.name} not found: {spec.shadow_recording}"
                )

    @classmethod
    def from_toml(cls, path: str | Path) -> "MissionConfig":
        base = Path(path).parent
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw, base_dir=base)

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: Path | None = None) -> "MissionConfig":
        channel_raw = raw.get("channel", {})
        channel = ChannelParams(
            sound_speed=channel_raw.get("sound_speed", 1500.0),
            byte_rate=channel_raw.get("byte_rate", 64.0),
            loss_p0=channel_raw.get("loss_p0", 0.0),
            loss_alpha=channel_raw.get("loss_alpha", 0.0),
            seed=raw.get("seed", 42),
        )
        th = raw.get("thresholds", {})
        pl = raw.get("plausibility", {})
        ship = raw.get("ship", {})
        platforms = []
        for p in raw.get("platforms", []):
            effects = {}
            for behavior_name, effect_list in p.get("behavior_effects", {}).items():
                bid = _BEHAVIOR_IDS.get(behavior_name)
                if bid is None:
                    try:
                        bid = int(behavior_name)
                    except ValueError:
                        raise MissionConfigError(
                            f"unknown behavior {behavior_name!r} in effects for {p.get('name')}"
                        ) from None
                effects[bid] = tuple(effect_list)
            shadow = p.get("shadow_recording")
            if shadow and base_dir is not None and not Path(shadow).is_absolute():
                shadow = str(base_dir / shadow)
            platforms.append(
                PlatformSpec(
                    name=p["name"],
                    position=PlatformPosition(*p["position"]),
                    measurement_period=p.get("measurement_period", 60.0),
                    sync_topics=tuple(p["sync_topics"]) if "sync_topics" in p else None,
                    shadow_recording=shadow,
                    shadow_loop=p.get("shadow_loop", False),
                    status_period=p.get("status_period"),
                    behavior_effects=effects,
                    oxia_period=p.get("oxia_period"),
                    hypoxia_period=p.get("hypoxia_period"),
                )
            )
        return cls(
            platforms=platforms,
            channel=channel,
            thresholds=Thresholds(
                hypoxia_enter=th.get("hypoxia_enter", 63.0),
                oxia_enter=th.get("oxia_enter", 150.0),
            ),
            bounds=PlausibilityBounds(
                min_plausible=pl.get("min", 0.0),
                max_plausible=pl.get("max", 500.0),
            ),
            guard_commands=raw.get("guard_commands", False),
            seed=raw.get("seed", 42),
            duration=raw.get("duration", 3600.0),
            mode=raw.get("mode", "virtual"),
            events=tuple(raw.get("events", ("Oxia", "Hypoxia"))),
            ship_position=PlatformPosition(*ship.get("position", (0.0, 0.0, 2.0))),
        )

    @classmethod
    def default(cls) -> "MissionConfig":
        """The shipped five-platform Boknis Eck layout."""
        return cls.from_toml(default_mission_path())


def default_mission_path() -> Path:
    return Path(resources.files("oceantwin").joinpath("data/boknis_eck.toml"))


def packaged_shadow_path(name: str = "mansio_cap_shadow.jsonl") -> Path:
    return Path(resources.files("oceantwin").joinpath(f"data/{name}"))


class MissionRuntime:
    """A fully wired deployment driven by one virtual clock."""

    def __init__(self, config: MissionConfig):
        self.config = config
        self.clock = VirtualClock()
        self.registry = standard_registry()
        self.channel = AcousticChannel(self.clock, replace(config.channel, seed=config.seed))
        self.basestation = Basestation(
            self.channel,
            self.clock,
            registry=self.registry,
            bounds=config.bounds,
            allowed_events=config.events,
            position=config.ship_position,
        )
        self.params = ParameterStore()
        self.deployment: set = set()
        self.pt: dict[str, Twin] = {}
        self.dt: dict[str, Twin] = {}
        self.rx_errors: list[tuple[float, str, str]] = []
        self._assemblers: dict[str, FrameAssembler] = {}
        self._receivers: dict[str, Any] = {}

        for spec in config.platforms:
            self._build_platform(spec)

    # -- assembly -----------------------------------------------------------------

    def _twin_config(self, spec: PlatformSpec, is_digital: bool) -> TwinConfig:
        shadow = None
        hardware_mode = {"o2": "real-simulated"}
        if spec.shadow_recording:
            shadow = ShadowRecording.load(spec.shadow_recording, loop=spec.shadow_loop)
            hardware_mode = {"o2": "emulated-shadow"}
        return TwinConfig(
            platform=spec.name,
            is_digital=is_digital,
            measurement_period=spec.measurement_period,
            sync_topics=spec.sync_topics,
            hardware_mode=hardware_mode,
            shadow=shadow,
            thresholds=self.config.thresholds,
            status_period=spec.status_period,
            behavior_effects=dict(spec.behavior_effects),
            guard_commands=self.config.guard_commands,
            oxia_period=spec.oxia_period,
            hypoxia_period=spec.hypoxia_period,
        )

    def _build_platform(self, spec: PlatformSpec) -> None:
        name = spec.name
        pt_config = self._twin_config(spec, is_digital=False)
        self.params.set_param(f"{name.lower()}/sync_topics", list(pt_config.sync_topics))

        self.channel.register_endpoint(name, spec.position, self._pt_receiver(name))
        self.pt[name] = start_twin(
            pt_config,
            MessageBus(),
            self.clock,
            uplink=self._pt_uplink(name),
            broadcast=self._pt_broadcast(name),
            deployment=self.deployment,
        )
        dt_twin = start_twin(
            self._twin_config(spec, is_digital=True),
            MessageBus(),
            self.clock,
            uplink=self.basestation.route_down,
            deployment=self.deployment,
        )
        self.dt[name] = dt_twin
        self.basestation.register_digital_twin(dt_twin, spec.measurement_period)

    def _pt_uplink(self, name: str):
        def send(envelope):
            data = encode(envelope, self.registry)
            for frame in fragment(data, envelope.sequence):
                self.channel.send_im(name, SHIP, frame.to_bytes())

        return send

    def _pt_broadcast(self, name: str):
        def send(envelope):
            data = encode(envelope, self.registry)
            for frame in fragment(data, envelope.sequence):
                self.channel.broadcast_im(name, frame.to_bytes())

        return send

    def _pt_receiver(self, name: str):
        assembler = self._assemblers.setdefault(name, FrameAssembler())

        def receive(src, frame_bytes):
            try:
                data = assembler.push(src, Frame.from_bytes(frame_bytes))
                if data is None:
                    return
                envelope = decode(data, self.registry)
            except CodecError as exc:
                self.rx_errors.append((self.clock.now, name, str(exc)))
                return
            self.pt[name].receive_envelope(envelope)

        self._receivers[name] = receive
        return receive

    def inject_frames(self, platform: str, src: str, frames) -> None:
        """Hand raw frames straight to a PT's receiver (hostile-input tests)."""
        receiver = self._receivers[platform]
        for frame in frames:
            receiver(src, frame.to_bytes())

    # -- execution ------------------------------------------------------------------

    def run_until(self, t: float) -> int:
        return self.clock.step(t)

    def stop_twins(self) -> None:
        for twin in self.pt.values():
            twin.stop()

    def run(self, duration: float | None = None, drain: bool = True) -> None:
        """Step to ``duration``, stop the measurement cycles, drain in-flight frames.

        In realtime mode one virtual second is paced to one wall second;
        the event core itself is identical.
        """
        duration = duration if duration is not None else self.config.duration
        if self.config.mode == "realtime":
            wall0 = time.monotonic()
            while True:
                target = min(time.monotonic() - wall0, duration)
                if target > self.clock.now:
                    self.clock.step(target)
                if target >= duration:
                    break
                time.sleep(0.02)
        else:
            self.clock.step(duration)
        if drain:
            self.stop_twins()
            self.clock.drain()
