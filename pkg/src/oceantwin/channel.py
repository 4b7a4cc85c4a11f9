"""Discrete-event simulator of the hydroacoustic instant-message network.

Models the things that matter for the digital thread at desk scale:
straight-line propagation delay from platform geometry, a sustained
byte-rate limit on each sender's transmitter, a seeded distance-based
loss model, and true broadcast (one transmission, independent per-receiver
fates).  Everything runs against a virtual clock; realtime mode paces the
same event core against the wall clock.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable

IM_RATE_BPS = 64.0           # sustained instant-message application rate, B/s
BURST_RATE_BPS = 6900.0 / 8  # burst mode, 6.9 kbit/s point-to-point
MAX_IM_BYTES = 64


class ChannelError(Exception):
    pass


class UnknownEndpoint(ChannelError):
    pass


class OversizedFrame(ChannelError):
    pass


class BroadcastUnsupported(ChannelError):
    pass


class EventHandle:
    """Cancellable entry in the virtual clock's queue."""

    __slots__ = ("time", "fn", "cancelled")

    def __init__(self, time: float, fn: Callable[[], None]):
        self.time = time
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualClock:
    """Event queue ordered by (time, insertion); time never decreases."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list[tuple[float, int, EventHandle]] = []
        self._counter = 0

    def schedule(self, time: float, fn: Callable[[], None]) -> EventHandle:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        handle = EventHandle(time, fn)
        self._counter += 1
        heapq.heappush(self._heap, (time, self._counter, handle))
        return handle

    def schedule_in(self, delay: float, fn: Callable[[], None]) -> EventHandle:
        return self.schedule(self.now + delay, fn)

    def peek_next(self) -> float | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def step(self, until: float) -> int:
        """Fire every event with time <= until, then set now = until."""
        if until < self.now:
            raise ValueError(f"cannot step backwards to {until} from {self.now}")
        fired = 0
        while self._heap and self._heap[0][0] <= until:
            _, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self.now = handle.time
            handle.fn()
            fired += 1
        self.now = until
        return fired

    def drain(self, limit: float = math.inf) -> int:
        """Fire remaining events (e.g. frames still in flight) up to ``limit``."""
        fired = 0
        while True:
            nxt = self.peek_next()
            if nxt is None or nxt > limit:
                return fired
            fired += self.step(nxt)


@dataclass(frozen=True)
class PlatformPosition:
    """Local tangent plane coordinates; depth is meters positive-down."""

    x: float
    y: float
    depth: float = 0.0

    def distance_to(self, other: "PlatformPosition") -> float:
        return math.sqrt(
            (self.x - other.x) ** 2
            + (self.y - other.y) ** 2
            + (self.depth - other.depth) ** 2
        )


@dataclass
class ChannelParams:
    sound_speed: float = 1500.0
    byte_rate: float = IM_RATE_BPS
    loss_p0: float = 0.0
    loss_alpha: float = 0.0  # per meter; defaults are uncalibrated placeholders
    seed: int = 0

    def __post_init__(self):
        if self.byte_rate <= 0:
            raise ValueError("byte_rate must be positive")
        if self.loss_p0 < 0 or self.loss_alpha < 0:
            raise ValueError("loss parameters must be non-negative")


@dataclass
class _Endpoint:
    name: str
    position: PlatformPosition
    receive: Callable[[str, bytes], None] | None
    tx_busy_until: float = 0.0


ReceiveFn = Callable[[str, bytes], None]


class AcousticChannel:
    """Simulated instant-message network between registered endpoints.

    Every send serializes through the sender's transmitter at
    ``byte_rate`` (frames queue behind earlier ones), then propagates at
    ``sound_speed`` over the straight-line distance.  Loss is a seeded
    Bernoulli draw with p(d) = min(1, p0 + alpha*d), optionally scaled by
    a per-link disturbance factor.  Dropped frames are never retried here;
    retry is the application's concern.
    """

    def __init__(self, clock: VirtualClock, params: ChannelParams | None = None):
        self.clock = clock
        self.params = params or ChannelParams()
        self._endpoints: dict[str, _Endpoint] = {}
        self._rng = random.Random(self.params.seed)
        self._disturbance: dict[tuple[str, str], float] = {}
        self.trace: list[dict[str, Any]] = []
        self.counters = {"sent": 0, "delivered": 0, "dropped": 0}

    # -- registration ------------------------------------------------------

    def register_endpoint(
        self, name: str, position: PlatformPosition, receive: ReceiveFn | None = None
    ) -> None:
        if name in self._endpoints:
            raise ChannelError(f"endpoint {name!r} already registered")
        self._endpoints[name] = _Endpoint(name, position, receive)

    def endpoints(self) -> list[str]:
        return list(self._endpoints)

    def position_of(self, name: str) -> PlatformPosition:
        return self._require(name).position

    def distance(self, a: str, b: str) -> float:
        return self._require(a).position.distance_to(self._require(b).position)

    def set_disturbance(self, src: str, dst: str, factor: float) -> None:
        """Scale the loss probability on one directed link (scenario scripting)."""
        if factor < 0:
            raise ValueError("disturbance factor must be non-negative")
        self._disturbance[(src, dst)] = factor

    def _require(self, name: str) -> _Endpoint:
        try:
            return self._endpoints[name]
        except KeyError:
            raise UnknownEndpoint(f"endpoint {name!r} not registered") from None

    # -- loss model ---------------------------------------------------------

    def loss_probability(self, src: str, dst: str) -> float:
        d = self.distance(src, dst)
        p = self.params.loss_p0 + self.params.loss_alpha * d
        p *= self._disturbance.get((src, dst), 1.0)
        return min(1.0, max(0.0, p))

    # -- instant messages ----------------------------------------------------

    def send_im(self, src: str, dst: str, frame: bytes) -> dict[str, Any]:
        """Queue one point-to-point instant message; returns its send record."""
        if src == dst:
            raise ChannelError("src and dst must differ")
        sender = self._require(src)
        self._require(dst)
        if len(frame) > MAX_IM_BYTES:
            raise OversizedFrame(f"{len(frame)} bytes exceeds the {MAX_IM_BYTES}-byte IM budget")
        start = max(self.clock.now, sender.tx_busy_until)
        finish = start + len(frame) / self.params.byte_rate
        sender.tx_busy_until = finish
        record = self._record(
            event="send", t=self.clock.now, src=src, dst=dst, bytes=len(frame),
            kind="im", t_start=start, t_finish=finish,
        )
        self._schedule_delivery(src, dst, frame, finish, kind="im")
        return record

    def broadcast_im(self, src: str, frame: bytes) -> list[dict[str, Any]]:
        """One transmission, independent per-receiver delays and drop draws.

        Returns one fate dict per receiver: {"dst", "fate", "t_arrival"}.
        """
        sender = self._require(src)
        if len(frame) > MAX_IM_BYTES:
            raise OversizedFrame(f"{len(frame)} bytes exceeds the {MAX_IM_BYTES}-byte IM budget")
        start = max(self.clock.now, sender.tx_busy_until)
        finish = start + len(frame) / self.params.byte_rate
        sender.tx_busy_until = finish
        self._record(
            event="send", t=self.clock.now, src=src, dst="*", bytes=len(frame),
            kind="broadcast", t_start=start, t_finish=finish,
        )
        fates = []
        for name in self._endpoints:
            if name == src:
                continue
            arrival = finish + self.distance(src, name) / self.params.sound_speed
            dropped = self._draw_drop(src, name)
            if dropped:
                self._record(
                    event="drop", t=self.clock.now, src=src, dst=name, bytes=len(frame),
                    kind="broadcast", reason="loss", t_would_arrive=arrival,
                )
                fates.append({"dst": name, "fate": "dropped", "t_arrival": None})
            else:
                self._deliver_later(src, name, frame, arrival, kind="broadcast")
                fates.append({"dst": name, "fate": "delivered", "t_arrival": arrival})
        return fates

    def burst_transfer(self, src: str, dst: str | None, payload: bytes) -> float:
        """Bulk point-to-point transfer at burst rate; returns completion time.

        Used only for comparison experiments; the digital thread itself
        stays on instant messages.
        """
        if dst is None:
            raise BroadcastUnsupported("burst mode cannot broadcast")
        if src == dst:
            raise ChannelError("src and dst must differ")
        sender = self._require(src)
        self._require(dst)
        start = max(self.clock.now, sender.tx_busy_until)
        finish = start + len(payload) / BURST_RATE_BPS
        sender.tx_busy_until = finish
        arrival = finish + self.distance(src, dst) / self.params.sound_speed
        self._record(
            event="send", t=self.clock.now, src=src, dst=dst, bytes=len(payload),
            kind="burst", t_start=start, t_finish=finish,
        )
        self._deliver_later(src, dst, payload, arrival, kind="burst")
        return arrival

    # -- internals ------------------------------------------------------------

    def _schedule_delivery(self, src: str, dst: str, frame: bytes, finish: float, kind: str):
        arrival = finish + self.distance(src, dst) / self.params.sound_speed
        if self._draw_drop(src, dst):
            self._record(
                event="drop", t=self.clock.now, src=src, dst=dst, bytes=len(frame),
                kind=kind, reason="loss", t_would_arrive=arrival,
            )
        else:
            self._deliver_later(src, dst, frame, arrival, kind=kind)

    def _draw_drop(self, src: str, dst: str) -> bool:
        p = self.loss_probability(src, dst)
        if p <= 0.0:
            return False
        return self._rng.random() < p

    def _deliver_later(self, src: str, dst: str, frame: bytes, arrival: float, kind: str):
        def fire():
            self._record(
                event="deliver", t=arrival, src=src, dst=dst, bytes=len(frame), kind=kind
            )
            receiver = self._endpoints[dst].receive
            if receiver is not None:
                receiver(src, frame)

        self.clock.schedule(arrival, fire)

    def _record(self, **fields) -> dict[str, Any]:
        self.trace.append(fields)
        event = fields["event"]
        if event == "send":
            self.counters["sent"] += 1
        elif event == "deliver":
            self.counters["delivered"] += 1
        elif event == "drop":
            self.counters["dropped"] += 1
        return fields
