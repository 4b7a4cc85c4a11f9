"""Topic matching, pub-sub delivery, and parameter store tests."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_match

from oceantwin.bus import (
    AlreadyAbsolute,
    MalformedPattern,
    MessageBus,
    ParameterStore,
    Skill,
    TopicPath,
    TopicPattern,
    UnresolvedRelativeTopic,
    match_pattern,
    resolve_relative,
)


def skill(namespace="/flux/skills/o2"):
    return Skill(1, "o2", TopicPath.parse(namespace))


class TestTopicPath:
    def test_parse_absolute(self):
        t = TopicPath.parse("/a/b/c")
        assert t.absolute and t.segments == ("a", "b", "c")
        assert str(t) == "/a/b/c"

    def test_parse_relative(self):
        t = TopicPath.parse("o2/std")
        assert not t.absolute and str(t) == "o2/std"

    def test_empty_segments_collapse(self):
        assert TopicPath.parse("/a//b").segments == ("a", "b")


class TestMatchPattern:
    def test_identity(self):
        assert match_pattern(TopicPattern.parse("/bigo/sensors/o2"),
                             TopicPath.parse("/bigo/sensors/o2"))

    def test_star_is_exactly_one_segment(self):
        assert not match_pattern(TopicPattern.parse("/bigo/*/o2"),
                                 TopicPath.parse("/bigo/a/b/o2"))
        assert match_pattern(TopicPattern.parse("/bigo/*/o2"),
                             TopicPath.parse("/bigo/a/o2"))

    def test_double_star_subtree(self):
        assert match_pattern(TopicPattern.parse("/mansio/**"),
                             TopicPath.parse("/mansio/skills/o2/std"))
        # '**' needs at least one remaining segment
        assert not match_pattern(TopicPattern.parse("/mansio/skills/o2/std/**"),
                                 TopicPath.parse("/mansio/skills/o2/std"))

    def test_midway_double_star_rejected(self):
        with pytest.raises(MalformedPattern):
            TopicPattern.parse("/a/**/c")

    @given(
        st.lists(st.sampled_from(["a", "b", "c", "*"]), min_size=1, max_size=5),
        st.booleans(),
        st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=6),
    )
    def test_agrees_with_brute_force(self, pseg, add_tail, tseg):
        pseg = pseg + ["**"] if add_tail else pseg
        pattern = TopicPattern(tuple(pseg))
        topic = TopicPath(tuple(tseg))
        assert match_pattern(pattern, topic) == brute_force_match(pseg, tseg)


class TestResolveRelative:
    def test_concatenation(self):
        s = Skill(2, "drive", TopicPath.parse("/viator/skills/drive"))
        assert str(resolve_relative(s, TopicPath.parse("status"))) == "/viator/skills/drive/status"

    def test_two_segment_relative(self):
        s = Skill(1, "skills", TopicPath.parse("/flux/skills"))
        assert str(resolve_relative(s, TopicPath.parse("o2/std"))) == "/flux/skills/o2/std"

    def test_absolute_input_rejected(self):
        with pytest.raises(AlreadyAbsolute):
            resolve_relative(skill(), TopicPath.parse("/flux/skills/o2/std"))


class TestMessageBus:
    def test_exact_subscriber_count(self):
        bus = MessageBus()
        got = []
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: got.append(m))
        assert bus.publish("/flux/skills/o2/std", "x", skill()) == 1
        assert got == ["x"]

    def test_no_subscribers_is_zero_not_error(self):
        assert MessageBus().publish("/flux/skills/o2/std", "x") == 0

    def test_subtree_and_exact_both_match(self):
        bus = MessageBus()
        hits = []
        bus.subscribe("/flux/**", lambda t, m, p: hits.append("tree"))
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: hits.append("exact"))
        assert bus.publish("/flux/skills/o2/std", 1) == 2
        assert sorted(hits) == ["exact", "tree"]

    def test_unsubscribe_stops_delivery(self):
        bus = MessageBus()
        got = []
        sub = bus.subscribe("/a/b", lambda t, m, p: got.append(m))
        bus.publish("/a/b", 1)
        bus.unsubscribe(sub)
        bus.publish("/a/b", 2)
        assert got == [1]

    def test_relative_publish_needs_publisher(self):
        with pytest.raises(UnresolvedRelativeTopic):
            MessageBus().publish("o2/std", "x")

    def test_relative_topic_resolved_through_skill(self):
        bus = MessageBus()
        got = []
        bus.subscribe("/flux/skills/o2/std", lambda t, m, p: got.append((str(t), m)))
        bus.publish(TopicPath.parse("std"), "x", skill())
        assert got == [("/flux/skills/o2/std", "x")]

    def test_fifo_preserved_with_nested_publish(self):
        bus = MessageBus()
        order = []

        def first_handler(topic, message, publisher):
            order.append(("a", message))
            if message == 1:
                bus.publish("/t/other", 99)

        bus.subscribe("/t/main", first_handler)
        bus.subscribe("/t/main", lambda t, m, p: order.append(("b", m)))
        bus.subscribe("/t/other", lambda t, m, p: order.append(("c", m)))
        bus.publish("/t/main", 1)
        bus.publish("/t/main", 2)
        # nested publish is queued after the in-flight delivery completes
        assert order == [("a", 1), ("b", 1), ("c", 99), ("a", 2), ("b", 2)]


class TestParameterStore:
    def test_set_then_get(self):
        store = ParameterStore()
        store.set_param("x", 3)
        assert store.get_param("x") == 3

    def test_unset_is_absent(self):
        store = ParameterStore()
        assert store.get_param("nope") is ParameterStore.ABSENT

    def test_sync_topic_list_order_preserved(self):
        store = ParameterStore()
        topics = ["/flux/skills/**", "/flux/extra/std"]
        store.set_param("flux/sync_topics", list(topics))
        assert store.get_param("flux/sync_topics") == topics
