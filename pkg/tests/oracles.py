"""Independent reference implementations used to check the real ones."""

from __future__ import annotations


def brute_force_match(pattern_segments, topic_segments) -> bool:
    """Reference topic matcher that enumerates every wildcard alignment.

    '*' consumes exactly one segment; a trailing '**' consumes one or more.
    Deliberately naive; kept independent of the production matcher.
    """

    def align(pi: int, ti: int) -> bool:
        if pi == len(pattern_segments):
            return ti == len(topic_segments)
        seg = pattern_segments[pi]
        if seg == "**":
            if pi != len(pattern_segments) - 1:
                return False
            # try every possible number of consumed segments (>= 1)
            return any(
                align(pi + 1, ti + k)
                for k in range(1, len(topic_segments) - ti + 1)
            )
        if ti >= len(topic_segments):
            return False
        if seg == "*" or seg == topic_segments[ti]:
            return align(pi + 1, ti + 1)
        return False

    return align(0, 0)
