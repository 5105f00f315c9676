from __future__ import annotations

import random
import re

import pytest

from datagen import EMAIL_REGEX, ICD_REGEX
from matcher import edge_runs, guarded_split_scan, regex_alphabet, regex_extent, scan, scan_truncated
from policy_io import validate_policy
from spans import MatchSpan, resolve_overlaps, validate_disjoint

ACCOUNT = r"Account\s+total:\s+(-?\d+\.\d{2})"


def _policy(*rules, max_match_bytes: int = 1024):
    return validate_policy(
        {
            "do_read": True,
            "do_write": True,
            "rules": [{"patterns": list(pats), "transformation": {"type": "redact"}} for pats in rules],
        },
        max_match_bytes=max_match_bytes,
    )


def _re(spec: str) -> dict:
    return {"type": "re", "spec": spec}


def test_email_is_one_span() -> None:
    p = _policy([_re(EMAIL_REGEX)])
    data = b"contact vanessa36@cox-mata.net today"
    spans = scan(data, p)
    assert len(spans) == 1
    s = spans[0]
    assert data[s.start : s.end] == b"vanessa36@cox-mata.net"
    assert s.length == 22


def test_capture_group_is_reported() -> None:
    p = _policy([_re(ACCOUNT)])
    data = b"x Account total:   -12.50 y"
    (s,) = scan(data, p)
    assert data[s.start : s.end] == b"Account total:   -12.50"
    assert data[s.capture[0] : s.capture[1]] == b"-12.50"


def test_overlapping_dictionary_terms_pick_leftmost() -> None:
    p = _policy([{"type": "dict", "spec": ["XXb", "bXX"], "case_sensitive": True, "word_boundary": False}])
    spans = scan(b"aXXbXXc", p)
    assert [(s.start, s.end) for s in spans] == [(1, 4)]


def test_dictionary_word_boundary_and_case() -> None:
    p = _policy([{"type": "dict", "spec": ["cat"]}])
    data = b"Cat concat CAT cats"
    assert [(s.start, s.end) for s in scan(data, p)] == [(0, 3), (11, 14)]


def test_longest_wins_then_lowest_rule() -> None:
    p = _policy([_re("ab")], [_re("abc")], [_re("abc")])
    (s,) = scan(b"abcd", p)
    assert (s.start, s.end, s.rule_index) == (0, 3, 1)


def test_empty_matches_are_skipped() -> None:
    p = _policy([_re("a*")])
    assert [(s.start, s.end) for s in scan(b"bab", p)] == [(1, 2)]


def test_matches_are_clipped_to_cap() -> None:
    p = _policy([_re("a+")], max_match_bytes=4)
    spans = scan(b"a" * 10, p)
    assert [(s.start, s.end) for s in spans] == [(0, 4), (4, 8), (8, 10)]
    ok, msg = validate_disjoint(spans, 10, cap=4)
    assert ok, msg


def test_scan_agrees_with_explicit_candidate_resolution() -> None:
    p = _policy([_re(r"\d{3}")], [_re(r"\d{2}-\d")])
    data = b"12-345 99-1 000"
    brute = []
    for start in range(len(data)):
        for end in range(start + 1, len(data) + 1):
            for rule_index, spec in enumerate((rb"\d{3}", rb"\d{2}-\d")):
                if re.fullmatch(spec, data[start:end]):
                    brute.append(MatchSpan(start, end, rule_index, 0))
    assert [(s.start, s.end, s.rule_index) for s in scan(data, p)] == [
        (s.start, s.end, s.rule_index) for s in resolve_overlaps(brute)
    ]


def test_extent_and_alphabet_analysis() -> None:
    assert regex_extent(r"\d{3}-\d{4}", 1024) == 8
    assert regex_extent(r"\w+", 64) == 64
    assert regex_extent(ICD_REGEX, 1024) == 5
    assert regex_alphabet(r"\d+") == frozenset(b"0123456789")
    assert regex_alphabet(r"(?i)ab") == frozenset(b"abAB")
    assert regex_alphabet(r"\bx\b") == frozenset(b"x")
    assert len(regex_alphabet(r"[^,]+")) == 255


def test_edge_runs_and_truncated_scan() -> None:
    p = _policy([_re(r"\d+")])
    assert edge_runs(b"12 ab 34", p, True, True) == (2, 2)
    assert edge_runs(b"12 ab 34", p, False, True) == (0, 2)

    spans, pre, suf = scan_truncated(b"12 5 34", p, True, True)
    assert (pre, suf) == (2, 2)
    assert [(s.start, s.end) for s in spans] == [(3, 4)]

    spans, pre, suf = scan_truncated(b"123456", p, True, False)
    assert spans == [] and pre == 6

    spans, pre, suf = scan_truncated(b"12 5 34", p, False, False)
    assert len(spans) == 3 and (pre, suf) == (0, 0)


def test_fixed_guard_misses_a_straddling_match() -> None:
    p = _policy([_re(r"\d{10}")])
    data = b"aaaa0123456789bbbb"
    assert guarded_split_scan(data, p, split=9, guard=2, widen=False) == []
    assert guarded_split_scan(data, p, split=9, guard=2) == scan(data, p)


def _random_text(rng: random.Random) -> bytes:
    parts = []
    for _ in range(rng.randint(1, 12)):
        kind = rng.random()
        if kind < 0.2:
            parts.append(f"user{rng.randint(0, 99)}@mail-{rng.randint(0, 9)}.example.org")
        elif kind < 0.4:
            parts.append(f"Account total: {rng.randint(-999, 9999)}.{rng.randint(0, 99):02d}")
        elif kind < 0.5:
            parts.append(rng.choice(["G30.1", "E11.9", "J45.0"]))
        else:
            parts.append("".join(rng.choice("abc XYZ.,\n01-") for _ in range(rng.randint(0, 20))))
    return rng.choice([" ", ",", "\n", ""]).join(parts).encode("utf-8")


@pytest.mark.parametrize("with_email", [True, False])
def test_split_scan_with_widening_matches_whole_scan(with_email: bool) -> None:
    rules = [[_re(ACCOUNT)], [_re(ICD_REGEX)]]
    if with_email:
        rules.insert(0, [_re(EMAIL_REGEX)])
    p = _policy(*rules)
    rng = random.Random(7 if with_email else 8)
    for _ in range(5000):
        data = _random_text(rng)
        split = rng.randint(0, len(data))
        guard = rng.randint(0, 8)
        assert guarded_split_scan(data, p, split, guard) == scan(data, p), (data, split, guard)
