"""Virtual clock and acoustic channel tests."""

import pytest

from oceantwin.channel import (
    AcousticChannel,
    BroadcastUnsupported,
    ChannelParams,
    OversizedFrame,
    PlatformPosition,
    UnknownEndpoint,
    VirtualClock,
)


def make_channel(positions=None, **params):
    clock = VirtualClock()
    channel = AcousticChannel(clock, ChannelParams(**params))
    received = []
    for name, pos in (positions or {}).items():
        channel.register_endpoint(
            name, pos, lambda src, frame, _n=name: received.append((_n, src, frame))
        )
    return clock, channel, received


class TestVirtualClock:
    def test_empty_queue_advances(self):
        clock = VirtualClock()
        assert clock.step(5.0) == 0
        assert clock.now == 5.0

    def test_equal_time_fires_in_insertion_order(self):
        clock = VirtualClock()
        fired = []
        clock.schedule(1.0, lambda: fired.append("a"))
        clock.schedule(1.0, lambda: fired.append("b"))
        clock.step(2.0)
        assert fired == ["a", "b"]

    def test_event_at_exactly_until_fires(self):
        clock = VirtualClock()
        fired = []
        clock.schedule(3.0, lambda: fired.append(1))
        clock.step(3.0)
        assert fired == [1]

    def test_cancelled_event_skipped(self):
        clock = VirtualClock()
        fired = []
        handle = clock.schedule(1.0, lambda: fired.append(1))
        handle.cancel()
        clock.step(2.0)
        assert fired == []

    def test_now_is_event_time_inside_handler(self):
        clock = VirtualClock()
        seen = []
        clock.schedule(1.5, lambda: seen.append(clock.now))
        clock.step(10.0)
        assert seen == [1.5]

    def test_no_backwards_step(self):
        clock = VirtualClock()
        clock.step(2.0)
        with pytest.raises(ValueError):
            clock.step(1.0)


class TestSendIM:
    def test_propagation_delay_exact(self):
        clock, channel, received = make_channel({
            "A": PlatformPosition(0, 0, 0),
            "B": PlatformPosition(1500, 0, 0),
        })
        channel.send_im("A", "B", b"x" * 64)
        # serialization 64/64 = 1.0 s, propagation 1500/1500 = 1.0 s
        clock.step(1.999999)
        assert received == []
        clock.step(2.0)
        assert received == [("B", "A", b"x" * 64)]

    def test_serialization_time_32_bytes(self):
        clock, channel, received = make_channel({
            "A": PlatformPosition(0, 0, 0),
            "B": PlatformPosition(0, 0, 10),
        })
        channel.send_im("A", "B", b"x" * 32)
        send = channel.trace[0]
        assert send["t_finish"] - send["t_start"] == pytest.approx(0.5, abs=1e-12)

    def test_queueing_behind_earlier_frames(self):
        clock, channel, _ = make_channel({
            "A": PlatformPosition(0, 0, 0),
            "B": PlatformPosition(0, 0, 10),
        })
        channel.send_im("A", "B", b"x" * 64)   # occupies [0, 1.0]
        channel.send_im("A", "B", b"y" * 32)   # starts at 1.0
        second = channel.trace[1]
        assert second["t_start"] == pytest.approx(1.0)
        assert second["t_finish"] == pytest.approx(1.5)

    def test_certain_loss_never_delivers(self):
        clock, channel, received = make_channel(
            {"A": PlatformPosition(0, 0, 0), "B": PlatformPosition(10, 0, 0)},
            loss_p0=1.0,
        )
        channel.send_im("A", "B", b"z")
        clock.drain()
        assert received == []
        assert channel.counters["dropped"] == 1

    def test_oversized_frame_rejected(self):
        _, channel, _ = make_channel({
            "A": PlatformPosition(0, 0, 0), "B": PlatformPosition(1, 0, 0)})
        with pytest.raises(OversizedFrame):
            channel.send_im("A", "B", b"x" * 65)

    def test_unknown_endpoint(self):
        _, channel, _ = make_channel({"A": PlatformPosition(0, 0, 0)})
        with pytest.raises(UnknownEndpoint):
            channel.send_im("A", "NOPE", b"x")


class TestBroadcast:
    POSITIONS = {
        "SHIP": PlatformPosition(0, 0, 0),
        "P1": PlatformPosition(300, 0, 20),
        "P2": PlatformPosition(0, 300, 20),
        "P3": PlatformPosition(-300, 0, 20),
        "P4": PlatformPosition(0, -300, 20),
    }

    def test_zero_loss_reaches_all_others(self):
        clock, channel, received = make_channel(self.POSITIONS)
        fates = channel.broadcast_im("SHIP", b"evt")
        clock.drain()
        assert len(received) == 4
        assert all(f["fate"] == "delivered" for f in fates)

    def test_equidistant_receivers_same_arrival(self):
        clock, channel, _ = make_channel(self.POSITIONS)
        fates = channel.broadcast_im("SHIP", b"evt")
        arrivals = {f["t_arrival"] for f in fates}
        assert len(arrivals) == 1

    def test_seeded_fates_reproducible(self):
        def run():
            clock, channel, _ = make_channel(self.POSITIONS, loss_p0=0.5, seed=7)
            fates = channel.broadcast_im("SHIP", b"evt")
            return [(f["dst"], f["fate"]) for f in fates]

        assert run() == run()

    def test_partial_delivery_possible(self):
        clock, channel, _ = make_channel(self.POSITIONS, loss_p0=0.5, seed=3)
        fates = channel.broadcast_im("SHIP", b"evt")
        outcomes = {f["fate"] for f in fates}
        assert outcomes == {"delivered", "dropped"}


class TestBurst:
    def test_8625_bytes_transfer_in_ten_seconds(self):
        clock, channel, _ = make_channel({
            "A": PlatformPosition(0, 0, 0), "B": PlatformPosition(0, 0, 0)})
        completion = channel.burst_transfer("A", "B", b"x" * 8625)
        # 6.9 kbit/s = 862.5 B/s; co-located endpoints -> pure transfer time
        assert completion == pytest.approx(10.0, abs=1e-9)

    def test_broadcast_unsupported(self):
        _, channel, _ = make_channel({"A": PlatformPosition(0, 0, 0)})
        with pytest.raises(BroadcastUnsupported):
            channel.burst_transfer("A", None, b"x")

    def test_zero_byte_payload_is_pure_propagation(self):
        clock, channel, _ = make_channel({
            "A": PlatformPosition(0, 0, 0), "B": PlatformPosition(862.5, 0, 0)})
        completion = channel.burst_transfer("A", "B", b"")
        assert completion == pytest.approx(862.5 / 1500.0, abs=1e-12)


class TestLossModel:
    def test_probability_clamped(self):
        _, channel, _ = make_channel(
            {"A": PlatformPosition(0, 0, 0), "B": PlatformPosition(1e9, 0, 0)},
            loss_p0=0.5, loss_alpha=1e-3,
        )
        assert channel.loss_probability("A", "B") == 1.0

    def test_disturbance_scales_link(self):
        _, channel, _ = make_channel(
            {"A": PlatformPosition(0, 0, 0), "B": PlatformPosition(100, 0, 0)},
            loss_p0=0.2,
        )
        channel.set_disturbance("A", "B", 3.0)
        assert channel.loss_probability("A", "B") == pytest.approx(0.6)
        assert channel.loss_probability("B", "A") == pytest.approx(0.2)

    def test_delivery_rate_non_increasing_with_distance(self):
        # empirical check of the distance-loss model, 10^4 draws per distance
        rates = []
        for d in (100.0, 1000.0, 4000.0):
            clock, channel, received = make_channel(
                {"A": PlatformPosition(0, 0, 0), "B": PlatformPosition(d, 0, 0)},
                loss_p0=0.05, loss_alpha=5e-5, seed=11,
            )
            for _ in range(10_000):
                channel.send_im("A", "B", b"x")
            clock.drain()
            rates.append(len(received) / 10_000)
        assert rates[0] >= rates[1] >= rates[2]
