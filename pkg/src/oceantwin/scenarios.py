"""The four field-experiment scenarios with machine-checkable assertions.

Each scenario assembles a mission from config, scripts operator actions
through the same service facade the console uses, runs the virtual clock,
and grades the outcome into a :class:`ScenarioReport`:

    (a) every platform syncs its measurements to its Digital Twin
    (b) behaviors commanded at the Digital Twins reach the Physical Twins
    (c) the ship broadcasts an oxygen event to all platforms
    (d) one Digital Twin decides; its Physical Twin broadcasts laterally
"""

from __future__ import annotations

import math
import random
from collections import defaultdict, deque
from dataclasses import replace
from typing import Any

from .api import BasestationService
from .codec import Direction, Envelope, encode, fragment
from .messages import (
    PLATFORM_IDS,
    SHIP,
    O2Event,
    SetBehavior,
    StandardO2,
    StandardStatus,
    BehaviorStatus,
)
from .mission import MissionConfig, MissionRuntime
from .report import ScenarioReport, write_outputs
from .twin import (
    BEHAVIOR_IDLE,
    BEHAVIOR_MEASURE_DEFAULT,
    BEHAVIOR_OXIA,
)

LATENCY_TOLERANCE_S = 1e-6
THROUGHPUT_WINDOWS_S = (0.25, 1.0, 5.0, 30.0)


# -- shared audits ------------------------------------------------------------


def expected_sample_count(duration: float, period: float) -> int:
    """Samples in (0, duration]; the first fires one period after start."""
    return math.floor(duration / period)


def latency_audit(runtime: MissionRuntime) -> dict[str, float]:
    """Re-derive per-frame arrival times from the trace and compare.

    Expected arrival = queue start (behind earlier frames of the same
    sender) + bytes/byte_rate + distance/sound_speed.
    """
    params = runtime.channel.params
    prev_finish: dict[str, float] = {}
    pending: dict[tuple[str, str], deque] = defaultdict(deque)
    latencies: list[float] = []
    errors: list[float] = []
    for rec in runtime.channel.trace:
        if rec.get("kind") != "im":
            continue
        if rec["event"] == "send":
            start = max(rec["t"], prev_finish.get(rec["src"], 0.0))
            finish = start + rec["bytes"] / params.byte_rate
            prev_finish[rec["src"]] = finish
            arrival = finish + runtime.channel.distance(rec["src"], rec["dst"]) / params.sound_speed
            pending[(rec["src"], rec["dst"])].append((rec["t"], arrival))
        elif rec["event"] == "drop":
            queue = pending[(rec["src"], rec["dst"])]
            if queue and abs(queue[0][1] - rec["t_would_arrive"]) <= 1e-9:
                queue.popleft()
        elif rec["event"] == "deliver":
            queue = pending[(rec["src"], rec["dst"])]
            if not queue:
                errors.append(math.inf)
                continue
            t_send, expected_arrival = queue.popleft()
            errors.append(abs(rec["t"] - expected_arrival))
            latencies.append(rec["t"] - t_send)
    return {
        "n": len(latencies),
        "mean": sum(latencies) / len(latencies) if latencies else 0.0,
        "max": max(latencies) if latencies else 0.0,
        "max_err": max(errors) if errors else 0.0,
    }


def throughput_audit(
    trace: list[dict[str, Any]],
    byte_rate: float,
    windows: tuple[float, ...] = THROUGHPUT_WINDOWS_S,
) -> dict[str, float]:
    """Sliding-window byte audit: never more than rate*W + 64 per sender.

    Audited on serialization completions per sender (the transmitter is the
    physical bottleneck; a broadcast is one transmission) and on delivered
    bytes per point-to-point link.  Burst-mode transfers run at their own
    rate and are excluded.
    """

    def max_excess(events: list[tuple[float, int]]) -> float:
        events.sort()
        worst = 0.0
        for window in windows:
            total = 0
            lo = 0
            for hi in range(len(events)):
                total += events[hi][1]
                while events[hi][0] - events[lo][0] > window:
                    total -= events[lo][1]
                    lo += 1
                worst = max(worst, total - (byte_rate * window + 64.0))
        return worst

    per_sender: dict[str, list[tuple[float, int]]] = defaultdict(list)
    per_link: dict[tuple[str, str], list[tuple[float, int]]] = defaultdict(list)
    for rec in trace:
        if rec.get("kind") == "burst":
            continue
        if rec["event"] == "send":
            per_sender[rec["src"]].append((rec["t_finish"], rec["bytes"]))
        elif rec["event"] == "deliver" and rec.get("kind") == "im":
            per_link[(rec["src"], rec["dst"])].append((rec["t"], rec["bytes"]))
    excess = 0.0
    for events in list(per_sender.values()) + list(per_link.values()):
        excess = max(excess, max_excess(events))
    return {"max_excess_bytes": excess}


def o2_rows_from_log(records) -> list[dict[str, Any]]:
    rows = []
    for r in records:
        if r.is_drop or r.type_name != "StandardO2":
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


def find_gaps(sample_times_s: list[float], period: float, factor: float = 2.0):
    """Gaps = consecutive sample spacings of at least ``factor`` * period."""
    return [
        (a, b)
        for a, b in zip(sample_times_s, sample_times_s[1:])
        if (b - a) >= factor * period
    ]


def _with_loss(config: MissionConfig, p0: float, alpha: float) -> MissionConfig:
    return replace(config, channel=replace(config.channel, loss_p0=p0, loss_alpha=alpha))


def _statuses_at_dt(records, platform: str, behavior_id: int, after: float = 0.0):
    return [
        r
        for r in records
        if not r.is_drop
        and r.direction == "PT_TO_DT"
        and r.platform == platform
        and r.type_name == "StandardStatus"
        and r.payload["behavior_id"] == behavior_id
        and r.payload["status"] == int(BehaviorStatus.RUNNING)
        and r.t >= after
    ]


def _finish(report, runtime, out_dir, figures):
    report.counts = dict(runtime.channel.counters)
    audit = latency_audit(runtime)
    report.latency = {"n": audit["n"], "mean": audit["mean"], "max": audit["max"]}
    if out_dir is not None:
        write_outputs(
            report,
            out_dir,
            runtime.basestation.log,
            runtime.channel.trace,
            o2_rows_from_log(runtime.basestation.log.records),
            figures=figures,
        )
    return report


# -- scenario (a): data synchronization ---------------------------------------------


def run_scenario_a(
    config: MissionConfig | None = None, out_dir=None, figures: bool = True
) -> ScenarioReport:
    """All platforms measure on their own cycles and sync up, loss-free."""
    config = config or MissionConfig.default()
    config = _with_loss(config, 0.0, 0.0)
    runtime = MissionRuntime(config)
    runtime.run(config.duration)
    report = ScenarioReport("a", config.seed, config.duration, config.mode)

    counts: dict[str, int] = defaultdict(int)
    for r in runtime.basestation.log.records:
        if not r.is_drop and r.type_name == "StandardO2":
            counts[r.platform] += 1
    for spec in config.platforms:
        expected = expected_sample_count(config.duration, spec.measurement_period)
        report.check(
            f"{spec.name} sample count matches period arithmetic",
            counts[spec.name] == expected,
            f"{counts[spec.name]} == {expected} (period {spec.measurement_period:g}s)",
        )
        report.per_platform[spec.name] = {
            "period": spec.measurement_period,
            "samples": counts[spec.name],
            "expected": expected,
        }

    c = runtime.channel.counters
    report.check(
        "zero loss delivers every frame",
        c["sent"] == c["delivered"] and c["dropped"] == 0,
        f"sent={c['sent']} delivered={c['delivered']} dropped={c['dropped']}",
    )
    audit = latency_audit(runtime)
    report.check(
        "latency = queueing + serialization + propagation",
        audit["max_err"] <= LATENCY_TOLERANCE_S,
        f"max deviation {audit['max_err']:.3g}s over {audit['n']} frames",
    )
    tput = throughput_audit(runtime.channel.trace, runtime.channel.params.byte_rate)
    report.check(
        "byte-rate bound holds in every window",
        tput["max_excess_bytes"] <= 0.0,
        f"max excess {tput['max_excess_bytes']:.3g} B",
    )
    return _finish(report, runtime, out_dir, figures)


# -- scenario (b): command synchronization --------------------------------------------


def _forged_frames(rng: random.Random, target_id: int, registry) -> list:
    """One illegitimate envelope (foreign/mis-directed/forged), as frames."""
    other_ids = [pid for pid in PLATFORM_IDS.values() if pid != target_id]
    kind = rng.randrange(5)
    if kind == 0:  # right platform, wrong direction
        direction = rng.choice((Direction.PT_TO_DT, Direction.BROADCAST))
        env = Envelope(target_id, 2, 3, direction, rng.randrange(0x10000),
                       SetBehavior.TYPE_ID, {"behavior_id": rng.randrange(256)})
    elif kind == 1:  # foreign platform, right direction
        env = Envelope(rng.choice(other_ids), 2, 3, Direction.DT_TO_PT,
                       rng.randrange(0x10000), SetBehavior.TYPE_ID,
                       {"behavior_id": rng.randrange(256)})
    elif kind == 2:  # telemetry type masquerading as a command
        env = Envelope(target_id, 1, 0, Direction.DT_TO_PT, rng.randrange(0x10000),
                       StandardO2.TYPE_ID,
                       {"timestamp_ms": rng.randrange(2**40), "oxygen": 100.0,
                        "saturation": 50.0, "temperature": 10.0})
    elif kind == 3:  # broadcast event nobody recognizes
        env = Envelope(rng.choice(other_ids), 1, 1, Direction.BROADCAST,
                       rng.randrange(0x10000), O2Event.TYPE_ID,
                       {"event": rng.choice(("Tempest", "Turbidity", "xOxia", "HYPOXIA?"))})
    else:  # foreign event command
        env = Envelope(rng.choice(other_ids), 1, 1, Direction.DT_TO_PT,
                       rng.randrange(0x10000), O2Event.TYPE_ID, {"event": "Hypoxia"})
    return fragment(encode(env, registry), env.sequence)


def run_scenario_b(
    config: MissionConfig | None = None,
    out_dir=None,
    figures: bool = True,
    forged_count: int = 10_000,
) -> ScenarioReport:
    """Commands reach every PT only through its DT; forgeries bounce off."""
    config = config or MissionConfig.default()
    duration = 900.0
    runtime = MissionRuntime(config)
    service = BasestationService(runtime)
    report = ScenarioReport("b", config.seed, duration, config.mode)
    names = [p.name for p in config.platforms]

    outcomes: dict[str, dict] = {}
    for i, name in enumerate(names):
        t_cmd = 60.0 + 40.0 * i
        runtime.clock.schedule(
            t_cmd, lambda n=name: outcomes.__setitem__(n, service.send_behavior(n, BEHAVIOR_OXIA))
        )
    mansio_script = [
        (400.0, BEHAVIOR_IDLE),
        (520.0, BEHAVIOR_MEASURE_DEFAULT),
        (640.0, BEHAVIOR_IDLE),
        (760.0, BEHAVIOR_MEASURE_DEFAULT),
    ]
    for t_cmd, behavior in mansio_script:
        runtime.clock.schedule(
            t_cmd, lambda b=behavior: service.send_behavior("MANSIO", b)
        )

    rng = random.Random(config.seed + 101)
    span = (800.0 - 300.0) / max(forged_count, 1)
    for i in range(forged_count):
        target = names[i % len(names)]
        frames = _forged_frames(rng, PLATFORM_IDS[target], runtime.registry)
        runtime.clock.schedule(
            300.0 + i * span,
            lambda n=target, fr=frames: runtime.inject_frames(n, SHIP, fr),
        )

    runtime.run(duration)
    records = runtime.basestation.log.records

    for name in names:
        statuses = _statuses_at_dt(records, name, BEHAVIOR_OXIA)
        report.check(
            f"{name} acknowledged SetBehavior with StandardStatus RUNNING",
            len(statuses) >= 1,
            f"{len(statuses)} status record(s) at the DT",
        )

    expected_log = {name: [BEHAVIOR_MEASURE_DEFAULT, BEHAVIOR_OXIA] for name in names}
    expected_log["MANSIO"] += [b for _, b in mansio_script]
    forged_changes = 0
    for name in names:
        got = [b for _, b in runtime.pt[name].behavior_log]
        forged_changes += max(0, len(got) - len(expected_log[name]))
        report.per_platform[name] = {
            "behavior_log": got,
            "rejected": len(runtime.pt[name].rejected_log),
        }
        report.check(
            f"{name} behavior changes all trace to DT commands",
            got == expected_log[name],
            f"{got}",
        )
    report.check(
        "forged/foreign/mis-directed envelopes caused zero behavior changes",
        forged_changes == 0,
        f"{forged_count} injected, {forged_changes} slipped through",
    )
    rejected_total = sum(len(runtime.pt[n].rejected_log) for n in names)
    report.check(
        "forgeries were rejected with logged reasons",
        rejected_total >= forged_count,
        f"{rejected_total} rejections recorded",
    )

    mansio_period = next(p.measurement_period for p in config.platforms if p.name == "MANSIO")
    times = [
        r.payload["timestamp_ms"] / 1000.0
        for r in records
        if not r.is_drop and r.platform == "MANSIO" and r.type_name == "StandardO2"
    ]
    gaps = find_gaps(times, mansio_period)
    report.check(
        "MANSIO stop/start leaves exactly two gaps in the O2 series",
        len(gaps) == 2,
        f"gaps at {[(round(a, 1), round(b, 1)) for a, b in gaps]}",
    )
    report.extras["mansio_gaps"] = gaps
    report.extras["command_outcomes"] = outcomes
    return _finish(report, runtime, out_dir, figures)


# -- scenario (c): ship-triggered broadcast ---------------------------------------------


def _check_receiver_switches(
    report: ScenarioReport,
    runtime: MissionRuntime,
    config: MissionConfig,
    delivered: set[str],
    missed: set[str],
    event: str,
    t_after: float,
) -> None:
    """Shared receiver-side assertions for scenarios (c) and (d)."""
    lossless = config.channel.loss_p0 == 0 and config.channel.loss_alpha == 0
    behavior_id = runtime.pt[next(iter(runtime.pt))].config.event_behaviors[event]
    records = runtime.basestation.log.records
    for name in sorted(delivered):
        pt = runtime.pt[name]
        report.check(
            f"{name} switched to the {event} behavior",
            pt.current_behavior == behavior_id,
            f"behavior {pt.current_behavior}",
        )
        expected_effects = pt.config.behavior_effects.get(behavior_id, ())
        if expected_effects:
            seen = [e for _, e in pt.effect_log]
            report.check(
                f"{name} recorded platform effects {list(expected_effects)}",
                all(e in seen for e in expected_effects),
                f"effect log {seen}",
            )
        if lossless:
            statuses = _statuses_at_dt(records, name, behavior_id, after=t_after)
            report.check(
                f"{name} status reached its DT",
                len(statuses) >= 1,
                f"{len(statuses)} record(s)",
            )
    for name in sorted(missed):
        pt = runtime.pt[name]
        report.check(
            f"{name} missed the broadcast and kept its behavior",
            pt.current_behavior != behavior_id,
            f"behavior {pt.current_behavior}",
        )


def run_scenario_c(
    config: MissionConfig | None = None,
    out_dir=None,
    figures: bool = True,
    event: str = "Hypoxia",
) -> ScenarioReport:
    """Operator broadcast from the ship; receivers switch strategies."""
    config = config or MissionConfig.default()
    duration = 300.0
    runtime = MissionRuntime(config)
    service = BasestationService(runtime)
    report = ScenarioReport("c", config.seed, duration, config.mode)

    runtime.clock.schedule(60.0, lambda: service.broadcast(event))
    runtime.run(duration)

    summary = runtime.basestation.broadcasts[0]
    delivered = {f["dst"] for f in summary["fates"] if f["fate"] == "delivered"}
    missed = {p.name for p in config.platforms} - delivered
    report.extras["broadcast"] = summary
    report.extras["delivered"] = sorted(delivered)
    report.extras["missed"] = sorted(missed)

    lossless = config.channel.loss_p0 == 0 and config.channel.loss_alpha == 0
    if lossless:
        report.check(
            "zero-loss broadcast reached all platforms",
            len(delivered) == len(config.platforms),
            f"delivered to {sorted(delivered)}",
        )
    _check_receiver_switches(report, runtime, config, delivered, missed, event, t_after=60.0)
    return _finish(report, runtime, out_dir, figures)


# -- scenario (d): DT decision, lateral PT broadcast ---------------------------------------


def run_scenario_d(
    config: MissionConfig | None = None,
    out_dir=None,
    figures: bool = True,
    event: str = "Hypoxia",
    origin: str = "FLUX",
) -> ScenarioReport:
    """Event injected at the origin DT; its PT broadcasts to the fleet."""
    config = config or MissionConfig.default()
    duration = 300.0
    runtime = MissionRuntime(config)
    service = BasestationService(runtime)
    report = ScenarioReport("d", config.seed, duration, config.mode)

    runtime.clock.schedule(60.0, lambda: service.inject_event(origin, event))
    runtime.run(duration)
    records = runtime.basestation.log.records

    injections = [
        r for r in records
        if not r.is_drop and r.direction == "DT_TO_PT"
        and r.platform == origin and r.type_name == "O2Event"
    ]
    report.check("event synced down from the origin DT", len(injections) == 1)
    lateral = [
        r for r in records
        if not r.is_drop and r.direction == "BROADCAST" and r.platform == origin
    ]
    report.check(
        f"{origin} PT is the broadcasting platform",
        len(lateral) == 1 and lateral[0].type_name == "O2Event",
        f"{len(lateral)} lateral broadcast(s) heard by the ship",
    )

    fates: dict[str, str] = {}
    for rec in runtime.channel.trace:
        if rec.get("kind") == "broadcast" and rec["src"] == origin and rec["dst"] not in ("*", SHIP):
            if rec["event"] == "deliver":
                fates[rec["dst"]] = "delivered"
            elif rec["event"] == "drop":
                fates.setdefault(rec["dst"], "dropped")
    delivered = {name for name, fate in fates.items() if fate == "delivered"}
    missed = {p.name for p in config.platforms if p.name != origin} - delivered
    report.extras["fates"] = fates
    report.extras["delivered"] = sorted(delivered)
    report.extras["missed"] = sorted(missed)

    lossless = config.channel.loss_p0 == 0 and config.channel.loss_alpha == 0
    if lossless:
        report.check(
            "zero-loss lateral broadcast reached the other platforms",
            len(delivered) == len(config.platforms) - 1,
            f"delivered to {sorted(delivered)}",
        )

    if injections and lateral:
        t_inj, t_bcast = injections[0].t, lateral[0].t
        behavior_id = runtime.pt[origin].config.event_behaviors[event]
        ordered = t_inj < t_bcast
        detail = [f"inject {t_inj:.3f}s < broadcast {t_bcast:.3f}s"]
        for name in sorted(delivered):
            statuses = _statuses_at_dt(records, name, behavior_id, after=t_bcast)
            if not statuses:
                if lossless:
                    ordered = False
                    detail.append(f"{name}: no status after broadcast")
                continue
            ordered = ordered and statuses[0].t > t_bcast
            detail.append(f"{name} status {statuses[0].t:.3f}s")
        report.check(
            "causal chain: DT injection < PT broadcast < receiver statuses",
            ordered,
            "; ".join(detail),
        )

    report.check(
        f"{origin} PT executed the event behavior itself",
        runtime.pt[origin].current_behavior
        == runtime.pt[origin].config.event_behaviors[event],
    )
    _check_receiver_switches(report, runtime, config, delivered, missed, event, t_after=60.0)
    return _finish(report, runtime, out_dir, figures)


SCENARIOS = {
    "a": run_scenario_a,
    "b": run_scenario_b,
    "c": run_scenario_c,
    "d": run_scenario_d,
}
