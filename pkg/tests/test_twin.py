"""Twin runtime tests: sync rules, behaviors, shadow playback, detection."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oceantwin.bus import MessageBus, TopicPath
from oceantwin.channel import VirtualClock
from oceantwin.codec import Direction, Envelope
from oceantwin.messages import (
    PLATFORM_IDS,
    BehaviorStatus,
    O2Event,
    SetBehavior,
    StandardO2,
    StandardStatus,
)
from oceantwin.twin import (
    BEHAVIOR_HYPOXIA,
    BEHAVIOR_IDLE,
    BEHAVIOR_MEASURE_DEFAULT,
    BEHAVIOR_OXIA,
    BeforeFirstSample,
    DuplicateTwin,
    InvalidPeriod,
    LocalBehaviorFailed,
    O2EventDetector,
    PlausibilityBounds,
    ShadowRecording,
    Thresholds,
    Twin,
    TwinConfig,
    emulate_sensor,
    plausibility_check,
    start_twin,
)


def make_twin(platform="FLUX", is_digital=False, deployment=None, **kwargs):
    clock = VirtualClock()
    bus = MessageBus()
    sent = []
    broadcasts = []
    config = TwinConfig(platform=platform, is_digital=is_digital, **kwargs)
    twin = start_twin(
        config, bus, clock,
        uplink=sent.append, broadcast=broadcasts.append,
        deployment=deployment,
    )
    return twin, clock, bus, sent, broadcasts


def dt_command(twin, behavior_id):
    return Envelope(
        platform_id=twin.platform_id, skill_id=2, topic_index=3,
        direction=Direction.DT_TO_PT, sequence=0,
        type_id=SetBehavior.TYPE_ID, payload={"behavior_id": behavior_id},
    )


class TestStartTwin:
    def test_first_sample_within_period(self):
        twin, clock, bus, sent, _ = make_twin(measurement_period=5.0)
        samples = []
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: samples.append(m))
        clock.step(5.0)
        assert len(samples) == 1
        assert isinstance(samples[0], StandardO2)
        assert [e.type_id for e in sent] == [StandardO2.TYPE_ID]

    def test_digital_twin_emits_no_sensor_data(self):
        twin, clock, _, sent, _ = make_twin(is_digital=True, measurement_period=5.0)
        clock.step(600.0)
        assert sent == []

    def test_duplicate_physical_twin_rejected(self):
        deployment = set()
        make_twin(deployment=deployment)
        with pytest.raises(DuplicateTwin):
            make_twin(deployment=deployment)

    def test_pt_and_dt_may_coexist(self):
        deployment = set()
        make_twin(deployment=deployment)
        make_twin(is_digital=True, deployment=deployment)

    def test_invalid_period(self):
        with pytest.raises(InvalidPeriod):
            TwinConfig(platform="FLUX", measurement_period=4.9)
        with pytest.raises(InvalidPeriod):
            TwinConfig(platform="FLUX", measurement_period=301.0)


class TestSyncOut:
    def test_matching_topic_emits_envelope(self):
        twin, _, _, sent, _ = make_twin()
        env = twin.sync_out("/flux/skills/o2/std",
                            StandardO2(0, 230.0, 80.0, 10.0))
        assert env is not None and env.direction == Direction.PT_TO_DT
        assert sent == [env]

    def test_non_matching_topic_stays_local(self):
        twin, _, bus, sent, _ = make_twin()
        local = []
        bus.subscribe("/flux/internal/debug", lambda t, m, p: local.append(m))
        env = twin.sync_out("/flux/internal/debug", "dbg")
        assert env is None and sent == [] and local == ["dbg"]

    def test_digital_twin_is_local_only(self):
        twin, _, bus, sent, _ = make_twin(is_digital=True)
        local = []
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: local.append(m))
        env = twin.sync_out("/flux/skills/o2/std", StandardO2(0, 1.0, 1.0, 1.0))
        assert env is None and sent == [] and len(local) == 1


class TestSyncInCommand:
    def test_dt_routed_setbehavior_changes_behavior_and_reports(self):
        twin, _, _, sent, _ = make_twin()
        result = twin.sync_in_command(dt_command(twin, BEHAVIOR_OXIA))
        assert result.accepted
        assert twin.current_behavior == BEHAVIOR_OXIA
        statuses = [e for e in sent if e.type_id == StandardStatus.TYPE_ID]
        running = [e for e in statuses if e.payload["status"] == int(BehaviorStatus.RUNNING)]
        assert len(running) == 1 and running[0].payload["behavior_id"] == BEHAVIOR_OXIA

    def test_wrong_direction_rejected(self):
        twin, _, _, _, _ = make_twin()
        env = dt_command(twin, 2)
        forged = Envelope(env.platform_id, env.skill_id, env.topic_index,
                          Direction.PT_TO_DT, 0, env.type_id, env.payload)
        result = twin.sync_in_command(forged)
        assert not result.accepted and result.reason == "rejected_direct_command"
        assert twin.current_behavior == BEHAVIOR_MEASURE_DEFAULT

    def test_foreign_platform_rejected(self):
        twin, _, _, _, _ = make_twin()
        env = dt_command(twin, 2)
        foreign = Envelope(PLATFORM_IDS["BIGO"], env.skill_id, env.topic_index,
                           Direction.DT_TO_PT, 0, env.type_id, env.payload)
        result = twin.sync_in_command(foreign)
        assert not result.accepted and result.reason == "rejected_foreign_command"


class TestHandleSetBehavior:
    def test_mansio_hypoxia_turns_lights_on(self):
        twin, _, _, _, _ = make_twin(
            "MANSIO", measurement_period=30.0,
            behavior_effects={BEHAVIOR_HYPOXIA: ("lights_on",)},
        )
        twin.handle_set_behavior(BEHAVIOR_HYPOXIA)
        assert "lights_on" in [e for _, e in twin.effect_log]

    def test_viator_hypoxia_moves_backwards(self):
        twin, _, _, _, _ = make_twin(
            "VIATOR", measurement_period=300.0,
            behavior_effects={BEHAVIOR_HYPOXIA: ("move_backwards",)},
        )
        twin.handle_set_behavior(BEHAVIOR_HYPOXIA)
        assert "move_backwards" in [e for _, e in twin.effect_log]

    def test_unknown_behavior_reports_failure(self):
        twin, _, _, sent, _ = make_twin()
        status = twin.handle_set_behavior(250)
        assert status.status == BehaviorStatus.FAILURE
        assert twin.current_behavior == BEHAVIOR_MEASURE_DEFAULT

    def test_running_predecessor_finishes_first(self):
        twin, _, _, sent, _ = make_twin()
        twin.handle_set_behavior(BEHAVIOR_OXIA)
        statuses = [e.payload for e in sent if e.type_id == StandardStatus.TYPE_ID]
        assert statuses[0]["status"] == int(BehaviorStatus.FINISHED)
        assert statuses[0]["behavior_id"] == BEHAVIOR_MEASURE_DEFAULT
        assert statuses[1]["status"] == int(BehaviorStatus.RUNNING)

    def test_idle_stops_measurement_until_resume(self):
        twin, clock, bus, _, _ = make_twin(measurement_period=5.0)
        samples = []
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: samples.append(clock.now))
        clock.step(10.0)          # two samples
        twin.handle_set_behavior(BEHAVIOR_IDLE)
        clock.step(60.0)          # silence
        assert len(samples) == 2
        twin.handle_set_behavior(BEHAVIOR_MEASURE_DEFAULT)
        clock.step(65.0)
        assert len(samples) == 3 and samples[-1] == 65.0


class TestGuardedSync:
    def test_guard_on_valid_behavior_synchronizes(self):
        twin, _, _, sent, _ = make_twin(is_digital=True, guard_commands=True)
        env = twin.guarded_sync_command(SetBehavior(BEHAVIOR_OXIA))
        assert env.direction == Direction.DT_TO_PT
        assert sent[-1] == env
        assert twin.current_behavior == BEHAVIOR_OXIA  # applied locally first

    def test_guard_on_unknown_behavior_blocks(self):
        twin, _, _, sent, _ = make_twin(is_digital=True, guard_commands=True)
        with pytest.raises(LocalBehaviorFailed):
            twin.guarded_sync_command(SetBehavior(250))
        assert all(e.type_id != SetBehavior.TYPE_ID for e in sent)

    def test_guard_off_synchronizes_unconditionally(self):
        twin, _, _, sent, _ = make_twin(is_digital=True, guard_commands=False)
        env = twin.guarded_sync_command(SetBehavior(250))
        assert env is not None and env.type_id == SetBehavior.TYPE_ID


class TestShadowPlayback:
    RECORDING = ShadowRecording((
        (0, 750.0, 110.0, 16.0),
        (1000, 760.0, 111.0, 16.1),
        (3000, 770.0, 112.0, 16.2),
    ))

    def test_exact_offset(self):
        sample = emulate_sensor(self.RECORDING, 1000)
        assert sample.oxygen == pytest.approx(760.0)

    def test_zero_order_hold_between_samples(self):
        sample = emulate_sensor(self.RECORDING, 2999)
        assert sample.oxygen == pytest.approx(760.0)

    def test_loop_wraps_modulo_span(self):
        looping = ShadowRecording(self.RECORDING.samples, loop=True)
        # span 3000 ms; t = span + 1000 lands back on sample 1
        assert emulate_sensor(looping, 4000).oxygen == pytest.approx(760.0)

    def test_before_first_sample(self):
        recording = ShadowRecording(((500, 1.0, 1.0, 1.0),))
        with pytest.raises(BeforeFirstSample):
            emulate_sensor(recording, 0)

    def test_pure_function(self):
        assert emulate_sensor(self.RECORDING, 1500) == emulate_sensor(self.RECORDING, 1500)

    def test_non_increasing_offsets_rejected(self):
        with pytest.raises(ValueError):
            ShadowRecording(((0, 1.0, 1.0, 1.0), (0, 2.0, 2.0, 2.0)))


class TestO2EventDetector:
    def test_below_threshold_is_hypoxia(self):
        det = O2EventDetector(Thresholds(63.0, 150.0))
        event = det.update(StandardO2(0, 50.0, 20.0, 10.0))
        assert event == O2Event("Hypoxia")

    def test_recovery_is_oxia(self):
        det = O2EventDetector(Thresholds(63.0, 150.0))
        det.update(StandardO2(0, 50.0, 20.0, 10.0))
        assert det.update(StandardO2(1, 230.0, 80.0, 10.0)) == O2Event("Oxia")

    def test_inside_band_is_quiet(self):
        det = O2EventDetector(Thresholds(63.0, 150.0))
        det.update(StandardO2(0, 50.0, 20.0, 10.0))
        assert det.update(StandardO2(1, 100.0, 40.0, 10.0)) is None

    def test_oxia_requires_prior_hypoxia(self):
        det = O2EventDetector(Thresholds(63.0, 150.0))
        assert det.update(StandardO2(0, 230.0, 80.0, 10.0)) is None

    @given(st.lists(st.floats(min_value=0, max_value=500, allow_nan=False), max_size=60))
    def test_no_consecutive_identical_events(self, series):
        det = O2EventDetector(Thresholds(63.0, 150.0))
        events = [e.event for s in series if (e := det.update(StandardO2(0, s, 0.0, 0.0)))]
        assert all(a != b for a, b in zip(events, events[1:]))


class TestPlausibility:
    BOUNDS = PlausibilityBounds(0.0, 500.0)

    def test_cap_reading_flagged(self):
        assert plausibility_check(StandardO2(0, 750.0, 110.0, 16.0), self.BOUNDS)

    def test_ambient_reading_plausible(self):
        assert not plausibility_check(StandardO2(0, 230.0, 80.0, 10.0), self.BOUNDS)

    def test_bound_is_closed(self):
        assert not plausibility_check(StandardO2(0, 500.0, 80.0, 10.0), self.BOUNDS)


class TestSingleCodePath:
    def test_pt_and_dt_register_identical_skills(self):
        config = TwinConfig(platform="MANSIO", measurement_period=30.0)
        clock = VirtualClock()
        pt = Twin(config, MessageBus(), clock)
        dt = Twin(config.digital_copy(), MessageBus(), clock)
        assert pt.skills == dt.skills
        assert pt.topic_table == dt.topic_table


def _non_command_envelopes():
    """Random envelopes that must never change a PT's behavior.

    Excludes the two legitimate triggers: DT_TO_PT commands addressed to
    this platform, and broadcast O2Events carrying a recognized event.
    """
    payloads = {
        StandardO2.TYPE_ID: st.fixed_dictionaries({
            "timestamp_ms": st.integers(0, 2**40),
            "oxygen": st.floats(0, 500, allow_nan=False, width=32),
            "saturation": st.floats(0, 150, allow_nan=False, width=32),
            "temperature": st.floats(-2, 30, allow_nan=False, width=32),
        }),
        StandardStatus.TYPE_ID: st.fixed_dictionaries({
            "timestamp_ms": st.integers(0, 2**40),
            "behavior_id": st.integers(0, 255),
            "status": st.integers(0, 2),
        }),
        SetBehavior.TYPE_ID: st.fixed_dictionaries({"behavior_id": st.integers(0, 255)}),
        O2Event.TYPE_ID: st.fixed_dictionaries({"event": st.text(min_size=1, max_size=8)}),
    }

    @st.composite
    def envelope(draw):
        type_id = draw(st.sampled_from(sorted(payloads)))
        payload = draw(payloads[type_id])
        direction = draw(st.sampled_from(list(Direction)))
        platform_id = draw(st.integers(0, 255))
        if direction == Direction.DT_TO_PT and platform_id == PLATFORM_IDS["FLUX"]:
            direction = Direction.PT_TO_DT  # keep it illegitimate
        if (direction == Direction.BROADCAST and type_id == O2Event.TYPE_ID
                and payload["event"] in ("Oxia", "Hypoxia")):
            payload = {"event": "?" + payload["event"]}
        return Envelope(platform_id, draw(st.integers(0, 255)), draw(st.integers(0, 255)),
                        direction, draw(st.integers(0, 0xFFFF)), type_id, payload)

    return st.lists(envelope(), max_size=40)


class TestCommandFunnel:
    @given(_non_command_envelopes())
    def test_illegitimate_envelopes_never_change_behavior(self, envelopes):
        twin, _, _, _, _ = make_twin()
        before = list(twin.behavior_log)
        for env in envelopes:
            twin.receive_envelope(env)
        assert twin.behavior_log == before


class TestStatusCausality:
    def test_exactly_one_running_per_accepted_command(self):
        # periodic status off so only command responses are observed
        twin, _, _, sent, _ = make_twin(status_period=None)
        for bid in (BEHAVIOR_OXIA, BEHAVIOR_HYPOXIA, BEHAVIOR_MEASURE_DEFAULT):
            twin.sync_in_command(dt_command(twin, bid))
        statuses = [e.payload for e in sent if e.type_id == StandardStatus.TYPE_ID]
        runnings = [s for s in statuses if s["status"] == int(BehaviorStatus.RUNNING)]
        assert [s["behavior_id"] for s in runnings] == [
            BEHAVIOR_OXIA, BEHAVIOR_HYPOXIA, BEHAVIOR_MEASURE_DEFAULT]
