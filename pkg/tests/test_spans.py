from __future__ import annotations

from spans import MatchSpan, count_by_rule, priority_key, resolve_overlaps, validate_disjoint


def test_leftmost_then_longest_then_lowest_rule() -> None:
    cands = [
        MatchSpan(3, 5, 0, 0),
        MatchSpan(1, 4, 1, 0),
        MatchSpan(1, 4, 0, 1),
        MatchSpan(1, 3, 0, 0),
        MatchSpan(4, 9, 2, 0),
    ]
    out = resolve_overlaps(cands)
    assert out == [MatchSpan(1, 4, 0, 1), MatchSpan(4, 9, 2, 0)]


def test_zero_length_candidates_are_ignored() -> None:
    assert resolve_overlaps([MatchSpan(2, 2, 0, 0)]) == []


def test_priority_key_orders_ties_by_pattern() -> None:
    a = MatchSpan(0, 3, 0, 0)
    b = MatchSpan(0, 3, 0, 1)
    assert priority_key(a) < priority_key(b)


def test_clip_and_shift_keep_capture_inside() -> None:
    s = MatchSpan(10, 30, 0, 0, capture=(20, 28))
    assert s.clipped(15) == MatchSpan(10, 25, 0, 0, capture=(20, 25))
    assert s.clipped(5).capture is None
    assert s.clipped(100) is s
    assert s.shifted(-10) == MatchSpan(0, 20, 0, 0, capture=(10, 18))


def test_counts_by_rule() -> None:
    spans = [MatchSpan(0, 1, 0, 0), MatchSpan(2, 3, 1, 0), MatchSpan(4, 5, 0, 0)]
    assert count_by_rule(spans, 3) == [2, 1, 0]


def test_validate_disjoint_reports_problems() -> None:
    ok, _ = validate_disjoint([MatchSpan(0, 2, 0, 0), MatchSpan(2, 4, 0, 0)], 4)
    assert ok

    ok, msg = validate_disjoint([MatchSpan(0, 3, 0, 0), MatchSpan(2, 4, 0, 0)], 4)
    assert not ok and "Overlap" in msg

    ok, msg = validate_disjoint([MatchSpan(0, 5, 0, 0)], 4)
    assert not ok and "bounds" in msg

    ok, msg = validate_disjoint([MatchSpan(0, 4, 0, 0)], 4, cap=2)
    assert not ok and "cap" in msg


def test_trimmed_drops_the_stored_prefix() -> None:
    s = MatchSpan(0, 10, 1, 0, capture=(2, 6))
    assert s.trimmed(0) is s
    assert s.trimmed(1) == MatchSpan(1, 10, 1, 0, capture=(2, 6))
    assert s.trimmed(3) == MatchSpan(3, 10, 1, 0, capture=None)
