"""Operator-facing service layer and its HTTP surface.

:class:`BasestationService` is the single mutation path for operators;
scenario scripts call the same methods the HTTP routes call, so both
paths exercise identical code.  In realtime mode every call is marshalled
onto the event core's thread through an executor, keeping the core free
of shared mutable state.

Routes: /twins, /twins/{id}/behavior, /twins/{id}/event, /broadcast,
/stream (server-sent events), /o2, /trace, /console/config.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from concurrent.futures import Future
from typing import Any, Callable

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .basestation import LogRecord, UnknownPlatform
from .messages import SetBehavior, O2Event
from .mission import MissionRuntime
from .twin import BEHAVIOR_NAMES, LocalBehaviorFailed


class DirectExecutor:
    """Runs calls inline; used in virtual-clock mode."""

    def submit(self, fn: Callable[[], Any]) -> Any:
        return fn()


class RealtimeRunner:
    """Paces the virtual clock against the wall clock on its own thread.

    External inputs (API calls) are enqueued and executed between clock
    steps, so the event core itself stays single-threaded.
    """

    def __init__(self, runtime: MissionRuntime, speed: float = 1.0, tick: float = 0.02):
        self.runtime = runtime
        self.speed = speed
        self.tick = tick
        self._inbox: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "RealtimeRunner":
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def submit(self, fn: Callable[[], Any]) -> Future:
        future: Future = Future()
        self._inbox.put((fn, future))
        return future

    def _loop(self) -> None:
        wall0 = time.monotonic()
        clock = self.runtime.clock
        while not self._stop.is_set():
            while True:
                try:
                    fn, future = self._inbox.get_nowait()
                except queue.Empty:
                    break
                try:
                    future.set_result(fn())
                except Exception as exc:  # surfaced to the caller via the future
                    future.set_exception(exc)
            target = (time.monotonic() - wall0) * self.speed
            if target > clock.now:
                clock.step(target)
            time.sleep(self.tick)


class RunnerExecutor:
    def __init__(self, runner: RealtimeRunner, timeout: float = 10.0):
        self.runner = runner
        self.timeout = timeout

    def submit(self, fn: Callable[[], Any]) -> Any:
        return self.runner.submit(fn).result(timeout=self.timeout)


class BasestationService:
    """Facade the console and the scenario harness both drive."""

    def __init__(self, runtime: MissionRuntime, executor=None):
        self.runtime = runtime
        self.executor = executor or DirectExecutor()

    # -- queries -------------------------------------------------------------

    def list_twins(self) -> list[dict[str, Any]]:
        def act():
            bs = self.runtime.basestation
            rows = []
            for platform, entry in bs.twins().items():
                last = entry.last_status
                rows.append(
                    {
                        "platform": platform,
                        "liveness": bs.liveness(platform),
                        "last_heard": entry.last_heard,
                        "measurement_period": entry.measurement_period,
                        "behavior_id": last.behavior_id if last else None,
                        "behavior_name": BEHAVIOR_NAMES.get(last.behavior_id) if last else None,
                        "behavior_status": last.status.name if last else None,
                        "dt_behavior_id": entry.twin.current_behavior,
                        "last_o2": (
                            {
                                "timestamp_ms": entry.last_o2.timestamp_ms,
                                "oxygen": entry.last_o2.oxygen,
                                "saturation": entry.last_o2.saturation,
                                "temperature": entry.last_o2.temperature,
                            }
                            if entry.last_o2
                            else None
                        ),
                        "implausible_count": entry.implausible_count,
                        "received": entry.received,
                    }
                )
            return rows

        return self.executor.submit(act)

    def o2_series(
        self,
        platform: str | None = None,
        since: float | None = None,
        until: float | None = None,
    ) -> list[dict[str, Any]]:
        def act():
            rows = []
            for r in self.runtime.basestation.log.records:
                if r.is_drop or r.type_name != "StandardO2":
                    continue
                if platform is not None and r.platform != platform:
                    continue
                if since is not None and r.t < since:
                    continue
                if until is not None and r.t > until:
                    continue
                rows.append(
                    {
                        "platform": r.platform,
                        "t": r.t,
                        "timestamp_ms": r.payload["timestamp_ms"],
                        "oxygen": r.payload["oxygen"],
                        "saturation": r.payload["saturation"],
                        "temperature": r.payload["temperature"],
                        "implausible": "IMPLAUSIBLE" in r.flags,
                    }
                )
            return rows

        return self.executor.submit(act)

    def trace_summary(self) -> dict[str, Any]:
        def act():
            per_sender: dict[str, dict[str, int]] = {}
            for rec in self.runtime.channel.trace:
                slot = per_sender.setdefault(
                    rec["src"], {"sent": 0, "delivered": 0, "dropped": 0}
                )
                if rec["event"] == "send":
                    slot["sent"] += 1
                elif rec["event"] == "deliver":
                    slot["delivered"] += 1
                elif rec["event"] == "drop":
                    slot["dropped"] += 1
            return {
                "t": self.runtime.clock.now,
                "counters": dict(self.runtime.channel.counters),
                "per_sender": per_sender,
                "broadcasts": list(self.runtime.basestation.broadcasts),
            }

        return self.executor.submit(act)

    def console_config(self) -> dict[str, Any]:
        def act():
            return {
                "platforms": [p.name for p in self.runtime.config.platforms],
                "behaviors": {str(bid): name for bid, name in BEHAVIOR_NAMES.items()},
                "events": list(self.runtime.config.events),
                "guard_commands": self.runtime.config.guard_commands,
            }

        return self.executor.submit(act)

    def log_records(self) -> list[LogRecord]:
        return self.executor.submit(lambda: list(self.runtime.basestation.log.records))

    # -- commands ---------------------------------------------------------------

    def send_behavior(self, platform: str, behavior_id: int) -> dict[str, Any]:
        def act():
            entry = self.runtime.basestation.entry(platform)
            dt = entry.twin
            try:
                dt.guarded_sync_command(SetBehavior(behavior_id))
            except LocalBehaviorFailed as exc:
                return {
                    "platform": platform,
                    "behavior_id": behavior_id,
                    "synchronized": False,
                    "guarded": True,
                    "local_status": "FAILURE",
                    "detail": str(exc),
                }
            local = dt.last_command_status
            return {
                "platform": platform,
                "behavior_id": behavior_id,
                "synchronized": True,
                "guarded": dt.config.guard_commands,
                "local_status": local.status.name if local else None,
            }

        return self.executor.submit(act)

    def inject_event(self, platform: str, event: str) -> dict[str, Any]:
        """Publish an O2Event into the platform DT's decision node."""

        def act():
            if event not in self.runtime.config.events:
                raise ValueError(f"event {event!r} not in configured list")
            entry = self.runtime.basestation.entry(platform)
            dt = entry.twin
            dt.bus.publish(dt.o2_event_topic, O2Event(event), None)
            return {"platform": platform, "event": event, "injected": True}

        return self.executor.submit(act)

    def broadcast(self, event: str) -> dict[str, Any]:
        def act():
            if event not in self.runtime.config.events:
                raise ValueError(f"event {event!r} not in configured list")
            return self.runtime.basestation.broadcast_event(event)

        return self.executor.submit(act)

    # -- stream ---------------------------------------------------------------

    def subscribe_stream(self, cb: Callable[[LogRecord], None]) -> None:
        self.executor.submit(lambda: self.runtime.basestation.log.subscribe(cb))

    def unsubscribe_stream(self, cb: Callable[[LogRecord], None]) -> None:
        self.executor.submit(lambda: self.runtime.basestation.log.unsubscribe(cb))


class BehaviorRequest(BaseModel):
    behavior_id: int = Field(ge=0, le=255)


class EventRequest(BaseModel):
    event: str = Field(min_length=1)


def create_app(service: BasestationService, console_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="oceantwin basestation", version="0.1.0")

    @app.get("/twins")
    def twins():
        return service.list_twins()

    @app.post("/twins/{platform}/behavior")
    def set_behavior(platform: str, request: BehaviorRequest):
        try:
            return service.send_behavior(platform, request.behavior_id)
        except UnknownPlatform as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/twins/{platform}/event")
    def inject_event(platform: str, request: EventRequest):
        try:
            return service.inject_event(platform, request.event)
        except UnknownPlatform as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/broadcast")
    def broadcast(request: EventRequest):
        try:
            return service.broadcast(request.event)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/o2")
    def o2(platform: str | None = None, since: float | None = None, until: float | None = None):
        return service.o2_series(platform, since, until)

    @app.get("/trace")
    def trace():
        return service.trace_summary()

    @app.get("/console/config")
    def console_config():
        return service.console_config()

    @app.get("/stream")
    def stream(backlog: int = 0, idle_close: float | None = None):
        q: queue.Queue = queue.Queue()
        if backlog:
            for record in service.log_records()[-backlog:]:
                q.put(record)
        service.subscribe_stream(q.put)

        def gen():
            idle = 0.0
            try:
                while True:
                    try:
                        record = q.get(timeout=0.25)
                    except queue.Empty:
                        idle += 0.25
                        if idle_close is not None and idle >= idle_close:
                            return
                        yield ": keepalive\n\n"
                        continue
                    idle = 0.0
                    payload = json.dumps(record.to_json_obj(), sort_keys=True)
                    yield f"data: {payload}\n\n"
            finally:
                service.unsubscribe_stream(q.put)

        return StreamingResponse(gen(), media_type="text/event-stream")

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
